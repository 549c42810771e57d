//! Sensor stream ingestion, windowing, pair sampling and synthetic data.

pub mod pairs;
pub mod split;
pub mod stream;
pub mod synth;
pub mod window;

pub use pairs::{
    pair_label, partial_split, sample_pairs, sample_pairs_within, PairItem, PartialSplit,
};
pub use split::{split_train_val_test, Split};
pub use stream::{
    downsample, load_stream, merge_activities, write_stream, ActivityMerge, DatasetConfig,
    LoadReport, SensorStream, StreamSchema,
};
pub use synth::{synth_generate, PersonFactors, SynthConfig};
pub use window::{segment, segment_samples, window_count, windows_to_stream, SourceSpan, Window};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stacks the selected windows into a `[B, channels, time]` batch.
pub fn batch_of(windows: &[Window], indices: &[usize]) -> Result<Tensor<f32>> {
    let items: Vec<&Tensor<f32>> = indices.iter().map(|&i| &windows[i].data).collect();
    if items.is_empty() {
        return Err(Error::Degenerate("empty batch".into()));
    }
    Tensor::stack(&items)
}

/// Loads every stream of a dataset and segments it with the configured
/// window length and step (in seconds, at the post-downsampling rate).
pub fn load_windows(cfg: &DatasetConfig, base_dir: &std::path::Path) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    for report in cfg.load(base_dir)? {
        out.extend(segment(
            &report.stream,
            cfg.window_seconds,
            cfg.step_seconds,
        )?);
    }
    if out.is_empty() {
        return Err(Error::Degenerate(format!(
            "dataset '{}' yields no label-pure windows",
            cfg.name
        )));
    }
    Ok(out)
}
