//! Clustering learned embeddings and scoring the clusters.
//!
//! Each task's embeddings are clustered with k-means (k = number of true
//! classes). Clusters are matched to classes with the Hungarian algorithm;
//! accuracy and mean F1 are computed under that matching.

pub mod kmeans;
pub mod metrics;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use kmeans::{kmeans, kmeans_plus_plus, lloyd, ClusterResult, KMeansConfig};
pub use metrics::{contingency, match_and_accuracy, mean_f1, ClassScore, F1Report, Matching};

use crate::data::{batch_of, Window};
use crate::error::{Error, Result};
use crate::siamese::Network;
use crate::task::Task;
use crate::tcn::Mode;
use crate::tensor::Tensor;

pub const MATCHING_METHOD: &str = "hungarian";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub task: Task,
    pub k: usize,
    pub accuracy: f64,
    pub mean_f1: f64,
    pub per_class: Vec<ClassScore>,
    pub matching: BTreeMap<usize, u32>,
    pub matching_method: String,
}

/// Eval-mode representations of a set of windows.
pub struct Embedded {
    /// `[N, C]` shared-encoder output.
    pub general: Tensor<f32>,
    /// `[N, dim]` per task.
    pub tasks: BTreeMap<Task, Tensor<f32>>,
}

/// Embeds `windows[indices]` in eval mode, `batch` windows at a time.
/// Eval-mode outputs of a window do not depend on its batch mates.
pub fn embed_windows(
    net: &Network<f32>,
    windows: &[Window],
    indices: &[usize],
    batch: usize,
) -> Result<Embedded> {
    if indices.is_empty() {
        return Err(Error::Degenerate("no windows to embed".into()));
    }
    let mut general = Vec::new();
    let mut tasks: BTreeMap<Task, Vec<f32>> = BTreeMap::new();
    for chunk in indices.chunks(batch.max(1)) {
        let x = batch_of(windows, chunk)?;
        let (emb, cache) = net.forward(&x, Mode::Eval)?;
        general.extend_from_slice(cache.general.data());
        for (task, t) in emb.by_task {
            tasks.entry(task).or_default().extend_from_slice(t.data());
        }
    }
    let n = indices.len();
    let general = Tensor::new(vec![n, net.config.general_dim()], general)?;
    let tasks = tasks
        .into_iter()
        .map(|(task, data)| {
            let dim = data.len() / n;
            Ok((task, Tensor::new(vec![n, dim], data)?))
        })
        .collect::<Result<_>>()?;
    Ok(Embedded { general, tasks })
}

fn rows_f64(t: &Tensor<f32>) -> Vec<Vec<f64>> {
    (0..t.shape()[0])
        .map(|i| t.row(i).iter().map(|&v| v as f64).collect())
        .collect()
}

fn labels_for(windows: &[Window], indices: &[usize], task: Task) -> Result<Vec<u32>> {
    indices
        .iter()
        .map(|&i| {
            windows[i]
                .label(task)
                .ok_or_else(|| Error::Degenerate(format!("window {i} has no '{task}' label")))
        })
        .collect()
}

/// Number of distinct classes of `task` among `windows[indices]`.
pub fn class_count(windows: &[Window], indices: &[usize], task: Task) -> Result<usize> {
    let mut l = labels_for(windows, indices, task)?;
    l.sort_unstable();
    l.dedup();
    Ok(l.len())
}

/// Clusters `points` into `k` groups and scores them against `labels`.
pub fn score_points(
    points: &[Vec<f64>],
    labels: &[u32],
    task: Task,
    k: usize,
    seed: u64,
) -> Result<Metrics> {
    let clusters = kmeans(points, &KMeansConfig::new(k, seed))?;
    let matching = match_and_accuracy(&clusters.assignments, labels)?;
    let f1 = mean_f1(&matching.predict(&clusters.assignments), labels)?;
    Ok(Metrics {
        task,
        k,
        accuracy: matching.accuracy,
        mean_f1: f1.mean_f1,
        per_class: f1.per_class,
        matching: matching.cluster_to_class,
        matching_method: MATCHING_METHOD.into(),
    })
}

/// Embeds windows through `task`'s head and scores a k-means clustering.
pub fn evaluate_task(
    net: &Network<f32>,
    windows: &[Window],
    indices: &[usize],
    task: Task,
    k: usize,
    seed: u64,
) -> Result<Metrics> {
    if net.head(task).is_none() {
        return Err(Error::Config(format!("network has no '{task}' head")));
    }
    let emb = embed_windows(net, windows, indices, 256)?;
    let points = rows_f64(&emb.tasks[&task]);
    score_points(&points, &labels_for(windows, indices, task)?, task, k, seed)
}

/// [`evaluate_task`] for every head of `net`, with k set to the number of
/// classes present in `windows[indices]`.
pub fn evaluate_heads(
    net: &Network<f32>,
    windows: &[Window],
    indices: &[usize],
    seed: u64,
) -> Result<Vec<Metrics>> {
    let emb = embed_windows(net, windows, indices, 256)?;
    emb.tasks
        .iter()
        .map(|(&task, t)| {
            let k = class_count(windows, indices, task)?;
            score_points(
                &rows_f64(t),
                &labels_for(windows, indices, task)?,
                task,
                k,
                seed,
            )
        })
        .collect()
}

/// k-means directly on the flattened raw windows.
pub fn raw_baseline(
    windows: &[Window],
    indices: &[usize],
    task: Task,
    k: usize,
    seed: u64,
) -> Result<Metrics> {
    let points: Vec<Vec<f64>> = indices
        .iter()
        .map(|&i| windows[i].data.data().iter().map(|&v| v as f64).collect())
        .collect();
    score_points(&points, &labels_for(windows, indices, task)?, task, k, seed)
}

/// One row per window: ids, labels, general representation, then each
/// task embedding. Values use the shortest exact decimal form of the f32.
pub fn export_embeddings(
    net: &Network<f32>,
    windows: &[Window],
    indices: &[usize],
    path: &Path,
) -> Result<()> {
    let emb = embed_windows(net, windows, indices, 256)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<String> = [
        "window_id",
        "stream_id",
        "start",
        "activity_id",
        "person_id",
        "attribute_id",
    ]
    .map(String::from)
    .to_vec();
    header.extend((0..emb.general.shape()[1]).map(|i| format!("general_{i}")));
    for (task, t) in &emb.tasks {
        header.extend((0..t.shape()[1]).map(|i| format!("{task}_{i}")));
    }
    w.write_record(&header)?;
    for (row, &i) in indices.iter().enumerate() {
        let win = &windows[i];
        let mut rec = vec![
            i.to_string(),
            win.source.stream_id.to_string(),
            win.source.start.to_string(),
            win.activity.to_string(),
            win.person.to_string(),
            win.attribute.map(|a| a.to_string()).unwrap_or_default(),
        ];
        rec.extend(emb.general.row(row).iter().map(|v| v.to_string()));
        for t in emb.tasks.values() {
            rec.extend(t.row(row).iter().map(|v| v.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub window_id: usize,
    pub activity: u32,
    pub person: u32,
    pub attribute: Option<u32>,
    pub general: Vec<f32>,
    pub tasks: BTreeMap<Task, Vec<f32>>,
}

/// Reads a file written by [`export_embeddings`].
pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRow>> {
    let bad = |d: String| Error::Schema {
        path: path.to_path_buf(),
        detail: d,
    };
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    // column group of each value column
    let groups: Vec<Option<Task>> = header[6..]
        .iter()
        .map(|h| {
            let prefix = h.rsplit_once('_').map(|(p, _)| p).unwrap_or(h);
            if prefix == "general" {
                Ok(None)
            } else {
                prefix.parse().map(Some)
            }
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<u32> {
            rec[i]
                .parse()
                .map_err(|_| bad(format!("bad id '{}'", &rec[i])))
        };
        let mut row = EmbeddingRow {
            window_id: num(0)? as usize,
            activity: num(3)?,
            person: num(4)?,
            attribute: if rec[5].is_empty() {
                None
            } else {
                Some(num(5)?)
            },
            general: Vec::new(),
            tasks: BTreeMap::new(),
        };
        for (field, group) in rec.iter().skip(6).zip(&groups) {
            let v: f32 = field
                .parse()
                .map_err(|_| bad(format!("bad value '{field}'")))?;
            match group {
                None => row.general.push(v),
                Some(t) => row.tasks.entry(*t).or_default().push(v),
            }
        }
        out.push(row);
    }
    Ok(out)
}

/// Plain-text metrics report: one summary line per task, then its per-class table.
pub fn format_report(metrics: &[Metrics]) -> String {
    let mut s = String::new();
    for m in metrics {
        let _ = writeln!(
            s,
            "task={} k={} accuracy={:.4} mean_f1={:.4} matching={}",
            m.task, m.k, m.accuracy, m.mean_f1, m.matching_method
        );
        let _ = writeln!(
            s,
            "  {:>8} {:>9} {:>9} {:>9} {:>8}",
            "class", "precision", "recall", "f1", "support"
        );
        for c in &m.per_class {
            let _ = writeln!(
                s,
                "  {:>8} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                c.class, c.precision, c.recall, c.f1, c.support
            );
        }
    }
    s
}
