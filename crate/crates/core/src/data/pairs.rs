//! Similarity pair sampling.
//!
//! Pairs carry only same/different labels derived from window labels. Each
//! pair is drawn by picking an anchor uniformly, then narrowing the
//! candidate partners task by task (in a random order) toward a fair coin
//! flip for that task's similarity. When a target is infeasible for the
//! remaining candidates the opposite value is taken. For independent tasks
//! such as activity and person this gives each task a positive rate of ½.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::window::Window;
use crate::error::{Error, Result};
use crate::loss::SimilarityLabel;
use crate::task::Task;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairItem {
    pub a: usize,
    pub b: usize,
    pub label: SimilarityLabel,
}

/// Similarity label of two windows for `tasks`; other tasks stay masked.
pub fn pair_label(wa: &Window, wb: &Window, tasks: &[Task]) -> Result<SimilarityLabel> {
    let mut label = SimilarityLabel::new();
    for &t in tasks {
        let (Some(la), Some(lb)) = (wa.label(t), wb.label(t)) else {
            return Err(Error::Degenerate(format!("windows carry no '{t}' label")));
        };
        label = label.with(t, la == lb);
    }
    Ok(label)
}

fn check_pool(windows: &[Window], pool: &[usize], tasks: &[Task]) -> Result<()> {
    if pool.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 windows to form pairs, have {}",
            pool.len()
        )));
    }
    if tasks.is_empty() {
        return Err(Error::Config("no tasks to sample pairs for".into()));
    }
    for &t in tasks {
        let classes: BTreeSet<Option<u32>> = pool.iter().map(|&i| windows[i].label(t)).collect();
        if classes.contains(&None) {
            return Err(Error::Degenerate(format!(
                "some windows carry no '{t}' label"
            )));
        }
        if classes.len() < 2 {
            return Err(Error::Degenerate(format!("task '{t}' has a single class")));
        }
    }
    Ok(())
}

/// Samples `count` pairs among `pool` (indices into `windows`). Self-pairs
/// are never produced.
pub fn sample_pairs_within(
    windows: &[Window],
    pool: &[usize],
    count: usize,
    tasks: &[Task],
    rng: &mut impl Rng,
) -> Result<Vec<PairItem>> {
    check_pool(windows, pool, tasks)?;
    let mut order = tasks.to_vec();
    let mut out = Vec::with_capacity(count);
    let mut candidates = Vec::with_capacity(pool.len());
    let mut narrowed = Vec::with_capacity(pool.len());
    for _ in 0..count {
        let a = pool[rng.random_range(0..pool.len())];
        let wa = &windows[a];
        candidates.clear();
        candidates.extend(pool.iter().copied().filter(|&i| i != a));
        order.shuffle(rng);
        for &task in &order {
            let want = rng.random_bool(0.5);
            let same = |i: &usize| windows[*i].label(task) == wa.label(task);
            narrowed.clear();
            narrowed.extend(candidates.iter().copied().filter(|i| same(i) == want));
            if narrowed.is_empty() {
                narrowed.extend(candidates.iter().copied().filter(|i| same(i) != want));
            }
            std::mem::swap(&mut candidates, &mut narrowed);
        }
        let b = candidates[rng.random_range(0..candidates.len())];
        out.push(PairItem {
            a,
            b,
            label: pair_label(wa, &windows[b], tasks)?,
        });
    }
    Ok(out)
}

/// Samples `count` pairs over all windows with a fresh seeded stream.
pub fn sample_pairs(
    windows: &[Window],
    count: usize,
    seed: u64,
    tasks: &[Task],
) -> Result<Vec<PairItem>> {
    let pool: Vec<usize> = (0..windows.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_pairs_within(windows, &pool, count, tasks, &mut rng)
}

/// Two disjoint halves of `pool` (sizes `⌊n/2⌋` and `⌈n/2⌉`): the first
/// supplies activity similarity only, the second person similarity only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialSplit {
    pub activity_half: Vec<usize>,
    pub person_half: Vec<usize>,
}

pub fn partial_split(pool: &[usize], seed: u64) -> Result<PartialSplit> {
    if pool.len() < 2 {
        return Err(Error::Degenerate("need at least 2 windows to split".into()));
    }
    let mut shuffled = pool.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let person_half = shuffled.split_off(pool.len() / 2);
    let mut activity_half = shuffled;
    activity_half.sort_unstable();
    let mut person_half = person_half;
    person_half.sort_unstable();
    Ok(PartialSplit {
        activity_half,
        person_half,
    })
}

impl PartialSplit {
    /// Half of `count` pairs from each side, never crossing halves.
    pub fn sample(
        &self,
        windows: &[Window],
        count: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<PairItem>> {
        let n_act = count / 2;
        let mut pairs =
            sample_pairs_within(windows, &self.activity_half, n_act, &[Task::Activity], rng)?;
        pairs.extend(sample_pairs_within(
            windows,
            &self.person_half,
            count - n_act,
            &[Task::Person],
            rng,
        )?);
        Ok(pairs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::window::SourceSpan;
    use crate::tensor::Tensor;

    fn win(activity: u32, person: u32) -> Window {
        Window {
            data: Tensor::zeros(vec![1, 4]),
            activity,
            person,
            attribute: Some(person % 2),
            source: SourceSpan {
                stream_id: 0,
                start: 0,
            },
        }
    }

    fn grid(persons: u32, acts: u32, reps: usize) -> Vec<Window> {
        let mut out = Vec::new();
        for p in 0..persons {
            for a in 0..acts {
                for _ in 0..reps {
                    out.push(win(a, p));
                }
            }
        }
        out
    }

    #[test]
    fn label_rule() {
        let l = pair_label(&win(1, 1), &win(1, 2), &[Task::Activity, Task::Person]).unwrap();
        assert_eq!(l.y(Task::Activity), Some(true));
        assert_eq!(l.y(Task::Person), Some(false));
        assert!(!l.is_present(Task::Attribute));
    }

    #[test]
    fn no_self_pairs_and_sound_labels() {
        let w = grid(3, 3, 4);
        let pairs = sample_pairs(&w, 2000, 1, &[Task::Activity, Task::Person]).unwrap();
        for p in &pairs {
            assert_ne!(p.a, p.b);
            assert_eq!(
                p.label,
                pair_label(&w[p.a], &w[p.b], &[Task::Activity, Task::Person]).unwrap()
            );
        }
    }

    #[test]
    fn positive_fraction_near_half() {
        let w = grid(4, 3, 10);
        let tasks = [Task::Activity, Task::Person];
        let pairs = sample_pairs(&w, 10_000, 7, &tasks).unwrap();
        for t in tasks {
            let pos = pairs.iter().filter(|p| p.label.y(t) == Some(true)).count();
            let frac = pos as f64 / pairs.len() as f64;
            assert!((0.45..=0.55).contains(&frac), "{t}: {frac}");
        }
    }

    #[test]
    fn two_windows() {
        let w = vec![win(0, 0), win(1, 1)];
        let p = sample_pairs(&w, 5, 0, &[Task::Activity]).unwrap();
        assert!(p
            .iter()
            .all(|p| p.a != p.b && p.label.y(Task::Activity) == Some(false)));
    }

    #[test]
    fn deterministic() {
        let w = grid(3, 2, 3);
        let tasks = [Task::Activity, Task::Person];
        assert_eq!(
            sample_pairs(&w, 100, 5, &tasks).unwrap(),
            sample_pairs(&w, 100, 5, &tasks).unwrap()
        );
    }

    #[test]
    fn degenerate_inputs() {
        let w = grid(1, 3, 2);
        assert!(matches!(
            sample_pairs(&w, 10, 0, &[Task::Person]),
            Err(Error::Degenerate(_))
        ));
        assert!(sample_pairs(&w[..1], 10, 0, &[Task::Activity]).is_err());
    }

    #[test]
    fn partial_split_halves() {
        let w = grid(5, 4, 5);
        let pool: Vec<usize> = (0..100).collect();
        let split = partial_split(&pool, 3).unwrap();
        assert_eq!(split.activity_half.len(), 50);
        assert_eq!(split.person_half.len(), 50);
        let mut all: Vec<usize> = split
            .activity_half
            .iter()
            .chain(&split.person_half)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, pool);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pairs = split.sample(&w, 400, &mut rng).unwrap();
        let in_act = |i: &usize| split.activity_half.binary_search(i).is_ok();
        for p in &pairs {
            let both = p.label.is_present(Task::Activity) && p.label.is_present(Task::Person);
            assert!(!both);
            assert_eq!(in_act(&p.a), in_act(&p.b), "cross-half pair");
            assert_eq!(p.label.is_present(Task::Activity), in_act(&p.a));
        }
    }
}
