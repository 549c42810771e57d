//! Contrastive loss per embedding space and the weighted multi-task sum.
//!
//! For a pair at Euclidean distance `D` with similarity `y`:
//! positive pairs cost `½D²`, negative pairs cost `½·max(0, margin − D)²`.
//! The multi-task objective weights each task's term and sums over the
//! batch. Tasks whose label is masked out contribute neither loss nor
//! gradient.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::siamese::EmbeddingSet;
use crate::task::Task;
use crate::tensor::{Real, Tensor};

/// Per-task pair similarity with a presence mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityLabel {
    y: [Option<bool>; 3],
    present: [bool; 3],
}

impl SimilarityLabel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `y` for `task` and marks it present.
    pub fn with(mut self, task: Task, similar: bool) -> Self {
        self.y[task.index()] = Some(similar);
        self.present[task.index()] = true;
        self
    }

    /// Marks `task` present without a label (invalid for the loss).
    pub fn expect(mut self, task: Task) -> Self {
        self.present[task.index()] = true;
        self
    }

    pub fn mask(mut self, task: Task) -> Self {
        self.present[task.index()] = false;
        self
    }

    pub fn is_present(&self, task: Task) -> bool {
        self.present[task.index()]
    }

    pub fn y(&self, task: Task) -> Option<bool> {
        self.y[task.index()]
    }

    pub fn present_tasks(&self) -> impl Iterator<Item = Task> + '_ {
        Task::ALL.into_iter().filter(|t| self.is_present(*t))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub margin: f64,
    pub weights: BTreeMap<Task, f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            weights: [(Task::Activity, 1.0), (Task::Person, 1.0)].into(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!(
                "margin {} must be positive",
                self.margin
            )));
        }
        if self.weights.values().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("task weights must be finite and >= 0".into()));
        }
        if !self.weights.values().any(|&w| w > 0.0) {
            return Err(Error::Config(
                "at least one task weight must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn weight(&self, task: Task) -> f64 {
        self.weights.get(&task).copied().unwrap_or(0.0)
    }
}

pub fn pair_distance<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "pair_distance",
            format!("dims {} and {}", a.len(), b.len()),
        ));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt())
}

pub fn contrastive<T: Real>(distance: T, similar: bool, margin: T) -> T {
    let half = T::from_f64_lossy(0.5);
    if similar {
        half * distance * distance
    } else {
        let gap = (margin - distance).max(T::zero());
        half * gap * gap
    }
}

/// Gradients of [`contrastive`] w.r.t. both embeddings. At `D = 0` for a
/// negative pair the gradient is taken as zero.
pub fn contrastive_grad<T: Real>(
    a: &[T],
    b: &[T],
    similar: bool,
    margin: T,
) -> Result<(Vec<T>, Vec<T>)> {
    let d = pair_distance(a, b)?;
    let scale = if similar {
        T::one()
    } else if d >= margin || d == T::zero() {
        T::zero()
    } else {
        -(margin - d) / d
    };
    let ga: Vec<T> = a.iter().zip(b).map(|(&x, &y)| scale * (x - y)).collect();
    let gb = ga.iter().map(|&g| -g).collect();
    Ok((ga, gb))
}

#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    /// Weighted sum over tasks and pairs.
    pub total: T,
    /// Unweighted per-task sums over the batch.
    pub per_task: BTreeMap<Task, T>,
    /// Number of pairs contributing to each task.
    pub counts: BTreeMap<Task, usize>,
    pub grads_a: EmbeddingSet<T>,
    pub grads_b: EmbeddingSet<T>,
}

/// Weighted contrastive loss over a batch of pairs, with gradients.
///
/// Row `i` of each embedding tensor belongs to `labels[i]`. Only tasks with
/// a positive weight are evaluated; among those, a pair contributes for the
/// tasks its label marks present.
pub fn multitask_loss<T: Real>(
    emb_a: &EmbeddingSet<T>,
    emb_b: &EmbeddingSet<T>,
    labels: &[SimilarityLabel],
    cfg: &LossConfig,
) -> Result<LossOutput<T>> {
    let margin = T::from_f64_lossy(cfg.margin);
    let mut out = LossOutput {
        total: T::zero(),
        per_task: BTreeMap::new(),
        counts: BTreeMap::new(),
        grads_a: EmbeddingSet::default(),
        grads_b: EmbeddingSet::default(),
    };
    for (&task, &w) in &cfg.weights {
        if w == 0.0 || !labels.iter().any(|l| l.is_present(task)) {
            continue;
        }
        let (Some(ha), Some(hb)) = (emb_a.get(task), emb_b.get(task)) else {
            return Err(Error::Config(format!(
                "task '{task}' is weighted and labelled but has no embeddings"
            )));
        };
        let (rows, dim) = ha.dims2()?;
        if hb.shape() != ha.shape() || rows != labels.len() {
            return Err(Error::shape(
                "multitask_loss",
                format!(
                    "embeddings {:?}/{:?} for {} labels",
                    ha.shape(),
                    hb.shape(),
                    labels.len()
                ),
            ));
        }
        let weight = T::from_f64_lossy(w);
        let mut sum = T::zero();
        let mut count = 0;
        let mut ga = vec![T::zero(); rows * dim];
        let mut gb = vec![T::zero(); rows * dim];
        for (i, label) in labels.iter().enumerate() {
            if !label.is_present(task) {
                continue;
            }
            let y = label.y(task).ok_or_else(|| {
                Error::Config(format!(
                    "pair {i} has task '{task}' unmasked but unlabelled"
                ))
            })?;
            let (ra, rb) = (ha.row(i), hb.row(i));
            sum += contrastive(pair_distance(ra, rb)?, y, margin);
            count += 1;
            let (da, db) = contrastive_grad(ra, rb, y, margin)?;
            for (dst, v) in ga[i * dim..(i + 1) * dim].iter_mut().zip(da) {
                *dst = weight * v;
            }
            for (dst, v) in gb[i * dim..(i + 1) * dim].iter_mut().zip(db) {
                *dst = weight * v;
            }
        }
        out.total += weight * sum;
        out.per_task.insert(task, sum);
        out.counts.insert(task, count);
        out.grads_a.insert(task, Tensor::new(vec![rows, dim], ga)?);
        out.grads_b.insert(task, Tensor::new(vec![rows, dim], gb)?);
    }
    if !out.total.is_finite() {
        return Err(Error::NonFinite("multitask_loss".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(task: Task, rows: &[&[f64]]) -> EmbeddingSet<f64> {
        let dim = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let mut s = EmbeddingSet::default();
        s.insert(task, Tensor::new(vec![rows.len(), dim], data).unwrap());
        s
    }

    #[test]
    fn distance_examples() {
        assert_eq!(pair_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(pair_distance(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        assert!((pair_distance(&[1.0, 1.0], &[2.0, 2.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(pair_distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn contrastive_examples() {
        assert_eq!(contrastive(0.0, true, 1.0), 0.0);
        assert_eq!(contrastive(3.0, false, 2.0), 0.0);
        assert_eq!(contrastive(1.0, false, 2.0), 0.5);
        assert_eq!(contrastive(2.0, true, 1.0), 2.0);
    }

    #[test]
    fn contrastive_grad_special_cases() {
        let (ga, gb) = contrastive_grad(&[1.0, 2.0], &[1.0, 2.0], true, 1.0).unwrap();
        assert!(ga.iter().chain(&gb).all(|&v| v == 0.0));
        let (ga, gb) = contrastive_grad(&[0.0, 0.0], &[3.0, 4.0], false, 2.0).unwrap();
        assert!(ga.iter().chain(&gb).all(|&v| v == 0.0));
        let (ga, _) = contrastive_grad(&[1.0, 1.0], &[1.0, 1.0], false, 2.0).unwrap();
        assert!(ga.iter().all(|&v| v == 0.0));
    }

    fn two_task_batch() -> (EmbeddingSet<f64>, EmbeddingSet<f64>, SimilarityLabel) {
        // act: negative at D=1 with margin 2 -> 0.5; pers: positive at D²=0.5 -> 0.25
        let mut a = set(Task::Activity, &[&[0.0, 0.0]]);
        let mut b = set(Task::Activity, &[&[1.0, 0.0]]);
        a.insert(
            Task::Person,
            Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap(),
        );
        b.insert(
            Task::Person,
            Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap(),
        );
        let label = SimilarityLabel::new()
            .with(Task::Activity, false)
            .with(Task::Person, true);
        (a, b, label)
    }

    fn cfg(margin: f64, act: f64, pers: f64) -> LossConfig {
        LossConfig {
            margin,
            weights: [(Task::Activity, act), (Task::Person, pers)].into(),
        }
    }

    #[test]
    fn weighted_sum_and_mask() {
        let (a, b, label) = two_task_batch();
        let out = multitask_loss(&a, &b, &[label], &cfg(2.0, 1.0, 1.0)).unwrap();
        assert_eq!(out.per_task[&Task::Activity], 0.5);
        assert!((out.per_task[&Task::Person] - 0.25).abs() < 1e-15);
        assert!((out.total - 0.75).abs() < 1e-15);

        let masked =
            multitask_loss(&a, &b, &[label.mask(Task::Person)], &cfg(2.0, 1.0, 1.0)).unwrap();
        assert_eq!(masked.total, 0.5);
        assert!(!masked.grads_a.by_task.contains_key(&Task::Person));
    }

    #[test]
    fn coincident_positives_cost_nothing() {
        let a = set(Task::Activity, &[&[1.0, 2.0], &[3.0, 4.0]]);
        let label = SimilarityLabel::new().with(Task::Activity, true);
        let out = multitask_loss(&a, &a, &[label, label], &cfg(1.0, 1.0, 0.0)).unwrap();
        assert_eq!(out.total, 0.0);
    }

    #[test]
    fn unmasked_without_label_is_an_error() {
        let (a, b, _) = two_task_batch();
        let label = SimilarityLabel::new()
            .with(Task::Activity, false)
            .expect(Task::Person);
        assert!(multitask_loss(&a, &b, &[label], &cfg(2.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0.0, 1.0, 1.0).validate().is_err());
        assert!(cfg(1.0, -1.0, 1.0).validate().is_err());
        assert!(cfg(1.0, 0.0, 0.0).validate().is_err());
        assert!(LossConfig::default().validate().is_ok());
    }
}
