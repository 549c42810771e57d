//! Run directories: the lock guarding them, the manifest and shared data loading.

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use siamtcn_core::data::{load_windows, split_train_val_test, Split};
use siamtcn_core::eval::Metrics;
use siamtcn_core::Window;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const OUT_ROOT_ENV: &str = "SIAMTCN_OUT_ROOT";
pub const MANIFEST: &str = "manifest.json";
pub const CHECKPOINT: &str = "checkpoint.wsmt";
pub const TRAIN_LOG: &str = "train_log.jsonl";
const LOCK: &str = ".lock";

/// `--out` if given, else `$SIAMTCN_OUT_ROOT/<name>` (root defaults to `runs`).
pub fn output_dir(explicit: Option<PathBuf>, name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| "runs".into());
        root.join(name)
    })
}

/// Exclusive hold on an output directory, released on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
        let path = dir.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CliError::Locked(dir.to_path_buf()))
            }
            Err(e) => Err(CliError::write(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Everything needed to reproduce and audit a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    /// Fully resolved configuration, after command-line overrides.
    pub config: RunConfig,
    /// Directory the dataset paths are resolved against.
    pub dataset_base: PathBuf,
    pub input_channels: usize,
    pub windows: usize,
    pub split: SplitSizes,
    pub param_count: usize,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub checkpoint: String,
    pub checkpoint_crc32: u32,
    pub matching: String,
    pub test_metrics: Vec<Metrics>,
    pub raw_baseline: Vec<Metrics>,
}

impl Manifest {
    pub fn read(run_dir: &Path) -> CliResult<Self> {
        let path = run_dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| CliError::missing(&path, e))?;
        serde_json::from_str(&text).map_err(|e| siamtcn_core::Error::Json(e).into())
    }

    pub fn write(&self, run_dir: &Path) -> CliResult<()> {
        write_json(&run_dir.join(MANIFEST), self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::write(path, e))?;
    serde_json::to_writer_pretty(file, value).map_err(siamtcn_core::Error::Json)?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::write(path, e))
}

pub struct Prepared {
    pub windows: Vec<Window>,
    pub split: Split,
}

pub fn prepare_data(cfg: &RunConfig, base: &Path) -> CliResult<Prepared> {
    let windows = load_windows(&cfg.dataset, base)?;
    let split = split_train_val_test(&windows, cfg.split.fractions, cfg.split.seed)?;
    Ok(Prepared { windows, split })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

impl SplitName {
    pub fn indices(self, data: &Prepared) -> Vec<usize> {
        match self {
            SplitName::Train => data.split.train.clone(),
            SplitName::Val => data.split.val.clone(),
            SplitName::Test => data.split.test.clone(),
            SplitName::All => (0..data.windows.len()).collect(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
            SplitName::All => "all",
        }
    }
}
