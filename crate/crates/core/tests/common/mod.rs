//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use siamtcn_core::data::SensorStream;

/// Best accuracy over every injective cluster -> class assignment, by
/// exhaustive search. Clusters and classes are dense ids `0..k`.
pub fn brute_force_accuracy(assignments: &[usize], labels: &[u32], k: usize) -> f64 {
    let mut table = vec![vec![0usize; k]; k];
    for (&a, &l) in assignments.iter().zip(labels) {
        table[a][l as usize] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |p| {
        let hit: usize = p.iter().enumerate().map(|(c, &cls)| table[c][cls]).sum();
        best = best.max(hit);
    });
    best as f64 / labels.len() as f64
}

fn permute(p: &mut Vec<usize>, i: usize, visit: &mut impl FnMut(&[usize])) {
    if i == p.len() {
        visit(p);
        return;
    }
    for j in i..p.len() {
        p.swap(i, j);
        permute(p, i + 1, visit);
        p.swap(i, j);
    }
}

/// Window starts by walking the stream, without the closed form.
pub fn enumerate_window_starts(len: usize, window: usize, step: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut s = 0;
    while s + window <= len {
        starts.push(s);
        s += step;
    }
    starts
}

/// A single-label stream whose only channel holds the sample index.
pub fn ramp_stream(len: usize) -> SensorStream {
    SensorStream {
        stream_id: 0,
        sample_rate_hz: 1.0,
        channel_names: vec!["x".into()],
        channels: vec![(0..len).map(|i| i as f32).collect()],
        activity: vec![1; len],
        person: vec![2; len],
        attribute: None,
    }
}
