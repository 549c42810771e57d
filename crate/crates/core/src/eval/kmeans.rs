use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub restarts: usize,
    /// Stop when inertia improves by less than this fraction.
    pub tol: f64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iters: 300,
            restarts: 10,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub k: usize,
    pub seed: u64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn distinct_count(points: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|v| v.to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// k-means++ seeding: first centroid uniform, then each next one drawn with
/// probability proportional to squared distance from the nearest chosen one.
pub fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut idx = d2.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd iterations from the given centroids. Returns the result and the
/// inertia after each assignment step.
pub fn lloyd(
    points: &[Vec<f64>],
    mut centroids: Vec<Vec<f64>>,
    max_iters: usize,
    tol: f64,
) -> (ClusterResult, Vec<f64>) {
    let k = centroids.len();
    let dim = points[0].len();
    let mut assignments = vec![0; points.len()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let mut inertia = 0.0;
        for (a, p) in assignments.iter_mut().zip(points) {
            let (j, d) = nearest(p, &centroids);
            *a = j;
            inertia += d;
        }
        let converged = trace
            .last()
            .is_some_and(|&prev: &f64| prev - inertia <= tol * prev.abs());
        trace.push(inertia);
        if converged || iterations >= max_iters {
            break;
        }
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            // an empty cluster keeps its previous centroid
            if counts[j] > 0 {
                let n = counts[j] as f64;
                centroids[j] = sums[j].iter().map(|s| s / n).collect();
            }
        }
    }
    let inertia = *trace.last().unwrap();
    (
        ClusterResult {
            assignments,
            centroids,
            inertia,
            k,
            seed: 0,
            iterations,
        },
        trace,
    )
}

/// Best-inertia k-means over `restarts` k-means++ initializations.
pub fn kmeans(points: &[Vec<f64>], cfg: &KMeansConfig) -> Result<ClusterResult> {
    if points.is_empty() {
        return Err(Error::Degenerate("no points to cluster".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::shape("kmeans", "points have differing dimensions"));
    }
    if cfg.k == 0 || cfg.restarts == 0 {
        return Err(Error::Config("k and restarts must be positive".into()));
    }
    let distinct = distinct_count(points);
    if cfg.k > distinct {
        return Err(Error::Degenerate(format!(
            "k = {} exceeds the {distinct} distinct points",
            cfg.k
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<ClusterResult> = None;
    for _ in 0..cfg.restarts {
        let init = kmeans_plus_plus(points, cfg.k, &mut rng);
        let (res, _) = lloyd(points, init, cfg.max_iters, cfg.tol);
        if best.as_ref().is_none_or(|b| res.inertia < b.inertia) {
            best = Some(res);
        }
    }
    let mut best = best.unwrap();
    best.seed = cfg.seed;
    Ok(best)
}
