//! Tabulates manifests across runs: per-run clustering scores, the raw-input
//! baseline, and each variant's difference to the multi-task run on the same
//! dataset and seed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use siamtcn_core::eval::Metrics;
use siamtcn_core::{Task, TrainMode};

use crate::error::{CliError, CliResult};
use crate::run::{Manifest, MANIFEST};

pub struct RunEntry {
    pub name: String,
    pub manifest: Manifest,
}

/// Manifests directly under `root` and in its immediate subdirectories, by name.
pub fn collect_runs(root: &Path) -> CliResult<Vec<RunEntry>> {
    let mut dirs: Vec<PathBuf> = vec![root.to_path_buf()];
    let listing = fs::read_dir(root).map_err(|e| CliError::missing(root, e))?;
    for entry in listing {
        let entry = entry.map_err(|e| CliError::missing(root, e))?;
        if entry.path().is_dir() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    let mut runs = Vec::new();
    for dir in dirs {
        if dir.join(MANIFEST).is_file() {
            let name = dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            runs.push(RunEntry {
                name,
                manifest: Manifest::read(&dir)?,
            });
        }
    }
    Ok(runs)
}

fn score(metrics: &[Metrics], task: Task) -> Option<&Metrics> {
    metrics.iter().find(|m| m.task == task)
}

fn cell(metrics: &[Metrics], task: Task) -> String {
    match score(metrics, task) {
        Some(m) => format!("{:.4} / {:.4}", m.accuracy, m.mean_f1),
        None => "-".into(),
    }
}

fn table(out: &mut String, runs: &[RunEntry], pick: fn(&Manifest) -> &[Metrics]) {
    let _ = writeln!(
        out,
        "{:<28} {:<10} {:<12} {:>5}  {:<17} {:<17} {:<17}",
        "run", "dataset", "mode", "seed", "act", "pers", "attr"
    );
    for r in runs {
        let m = &r.manifest;
        let metrics = pick(m);
        let _ = writeln!(
            out,
            "{:<28} {:<10} {:<12} {:>5}  {:<17} {:<17} {:<17}",
            r.name,
            m.config.dataset.name,
            m.config.train.mode.to_string(),
            m.config.train.seed,
            cell(metrics, Task::Activity),
            cell(metrics, Task::Person),
            cell(metrics, Task::Attribute),
        );
    }
}

pub fn render(runs: &[RunEntry]) -> String {
    let mut out = String::new();
    let matching = runs
        .first()
        .map(|r| r.manifest.matching.as_str())
        .unwrap_or("hungarian");
    let _ = writeln!(
        out,
        "Clustering on the test split (accuracy / F_m, cluster matching: {matching})"
    );
    table(&mut out, runs, |m| &m.test_metrics);
    let _ = writeln!(out);
    let _ = writeln!(out, "Raw-input k-means baseline (accuracy / F_m)");
    table(&mut out, runs, |m| &m.raw_baseline);
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "Ablation: accuracy of each variant minus the multi-task run (same dataset and seed)"
    );
    let _ = writeln!(
        out,
        "{:<10} {:>5}  {:<12} {:>9} {:>9} {:>9}",
        "dataset", "seed", "variant", "act", "pers", "attr"
    );
    let mut rows = 0;
    for r in runs {
        let m = &r.manifest;
        let mode = m.config.train.mode;
        if mode == TrainMode::Multi {
            continue;
        }
        let Some(base) = runs.iter().find(|b| {
            b.manifest.config.train.mode == TrainMode::Multi
                && b.manifest.config.dataset.name == m.config.dataset.name
                && b.manifest.config.train.seed == m.config.train.seed
        }) else {
            continue;
        };
        let trained = mode.sampled_tasks();
        let diff = |task: Task| -> String {
            if !trained.contains(&task) {
                return "-".into();
            }
            match (
                score(&m.test_metrics, task),
                score(&base.manifest.test_metrics, task),
            ) {
                (Some(v), Some(b)) => format!("{:+.4}", v.accuracy - b.accuracy),
                (Some(v), None) => format!("{:.4}", v.accuracy),
                _ => "-".into(),
            }
        };
        let _ = writeln!(
            out,
            "{:<10} {:>5}  {:<12} {:>9} {:>9} {:>9}",
            m.config.dataset.name,
            m.config.train.seed,
            mode.to_string(),
            diff(Task::Activity),
            diff(Task::Person),
            diff(Task::Attribute),
        );
        rows += 1;
    }
    if rows == 0 {
        let _ = writeln!(out, "(no variant has a matching multi-task run)");
    }
    out
}
