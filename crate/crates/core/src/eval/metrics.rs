use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-to-one cluster → class assignment maximizing agreement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    pub cluster_to_class: BTreeMap<usize, u32>,
    pub accuracy: f64,
}

impl Matching {
    /// Predicted class per sample; clusters left unmatched map to `None`.
    pub fn predict(&self, assignments: &[usize]) -> Vec<Option<u32>> {
        assignments
            .iter()
            .map(|c| self.cluster_to_class.get(c).copied())
            .collect()
    }
}

/// Contingency table `counts[cluster][class]` over dense indices.
pub fn contingency(assignments: &[usize], labels: &[u32]) -> (Vec<usize>, Vec<u32>, Vec<Vec<i64>>) {
    let clusters: Vec<usize> = assignments
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let classes: Vec<u32> = labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut table = vec![vec![0i64; classes.len()]; clusters.len()];
    for (a, l) in assignments.iter().zip(labels) {
        let r = clusters.binary_search(a).unwrap();
        let c = classes.binary_search(l).unwrap();
        table[r][c] += 1;
    }
    (clusters, classes, table)
}

/// Minimum-cost perfect assignment on a square cost matrix (shortest
/// augmenting path form of the Hungarian algorithm, O(n³)). Returns the
/// column assigned to each row.
pub fn hungarian(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based potentials; column 0 is the virtual source
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0; n];
    for j in 1..=n {
        col_of[row_of[j] - 1] = j - 1;
    }
    col_of
}

/// Maximum-weight matching of clusters to classes (Hungarian algorithm)
/// and the fraction of samples it labels correctly.
pub fn match_and_accuracy(assignments: &[usize], labels: &[u32]) -> Result<Matching> {
    if assignments.len() != labels.len() {
        return Err(Error::shape(
            "match_and_accuracy",
            format!(
                "{} assignments vs {} labels",
                assignments.len(),
                labels.len()
            ),
        ));
    }
    if labels.is_empty() {
        return Err(Error::Degenerate("nothing to score".into()));
    }
    let (clusters, classes, table) = contingency(assignments, labels);
    let n = clusters.len().max(classes.len());
    // maximize agreement = minimize its negation; padding rows/columns cost 0
    let mut cost = vec![vec![0i64; n]; n];
    for (r, row) in table.iter().enumerate() {
        for (c, &count) in row.iter().enumerate() {
            cost[r][c] = -count;
        }
    }
    let cols = hungarian(&cost);
    let matched: i64 = cols.iter().enumerate().map(|(r, &c)| -cost[r][c]).sum();
    let cluster_to_class = cols
        .iter()
        .enumerate()
        .filter(|&(r, &c)| r < clusters.len() && c < classes.len())
        .map(|(r, &c)| (clusters[r], classes[c]))
        .collect();
    Ok(Matching {
        cluster_to_class,
        accuracy: matched as f64 / labels.len() as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: u32,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub mean_f1: f64,
    pub per_class: Vec<ClassScore>,
}

/// Unweighted mean over classes of `2·P·R/(P+R)`. Classes are those present
/// in either the truth or the predictions; a class with `P + R = 0`
/// scores 0. `None` predictions count as wrong for every class.
pub fn mean_f1(pred: &[Option<u32>], truth: &[u32]) -> Result<F1Report> {
    if pred.len() != truth.len() {
        return Err(Error::shape(
            "mean_f1",
            format!("{} predictions vs {} labels", pred.len(), truth.len()),
        ));
    }
    if truth.is_empty() {
        return Err(Error::Degenerate("mean F1 of an empty set".into()));
    }
    let classes: BTreeSet<u32> = truth
        .iter()
        .copied()
        .chain(pred.iter().flatten().copied())
        .collect();
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let per_class: Vec<ClassScore> = classes
        .iter()
        .map(|&c| {
            let tp = pred
                .iter()
                .zip(truth)
                .filter(|(p, t)| **p == Some(c) && **t == c)
                .count();
            let predicted = pred.iter().filter(|p| **p == Some(c)).count();
            let support = truth.iter().filter(|t| **t == c).count();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassScore {
                class: c,
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let mean_f1 = per_class.iter().map(|s| s.f1).sum::<f64>() / per_class.len() as f64;
    Ok(F1Report { mean_f1, per_class })
}
