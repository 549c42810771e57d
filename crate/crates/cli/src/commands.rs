use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use siamtcn_core::checkpoint::{load_checkpoint, save_checkpoint};
use siamtcn_core::data::{
    synth_generate, windows_to_stream, write_stream, DatasetConfig, StreamSchema,
};
use siamtcn_core::eval::{
    class_count, evaluate_heads, export_embeddings, format_report, raw_baseline, MATCHING_METHOD,
};
use siamtcn_core::gradcheck;
use siamtcn_core::train::{train, TrainData};
use siamtcn_core::{Network, SynthConfig, TrainMode};

use crate::config::{NetworkSection, RunConfig};
use crate::error::{CliError, CliResult};
use crate::report;
use crate::run::{
    output_dir, prepare_data, write_json, write_text, Manifest, RunLock, SplitName, SplitSizes,
    CHECKPOINT, OUT_ROOT_ENV, TRAIN_LOG,
};

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    pub persons: usize,
    #[arg(long, default_value_t = 3)]
    pub activities: usize,
    #[arg(long, default_value_t = 2)]
    pub attribute_classes: usize,
    #[arg(long, default_value_t = 50)]
    pub windows_per_cell: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    /// Samples per window.
    #[arg(long, default_value_t = 64)]
    pub length: usize,
    /// Standard deviation of the additive Gaussian noise.
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample rate written into the stream file, in Hz.
    #[arg(long, default_value_t = 50.0)]
    pub rate: f64,
    /// Output directory [default: $SIAMTCN_OUT_ROOT/synth-s<seed>]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Writes `synth.csv` (one stream, all windows back to back) and a run
/// config `dataset.toml` that windows it back into the generated windows.
pub fn synth(args: SynthArgs) -> CliResult<()> {
    if args.rate.is_nan() || args.rate <= 0.0 {
        return Err(CliError::Option("--rate must be positive".into()));
    }
    let cfg = SynthConfig {
        persons: args.persons,
        activities: args.activities,
        attribute_classes: args.attribute_classes,
        windows_per_cell: args.windows_per_cell,
        channels: args.channels,
        length: args.length,
        noise: args.noise,
        seed: args.seed,
    };
    let windows = synth_generate(&cfg)?;
    let dir = output_dir(args.out, &format!("synth-s{}", args.seed));
    let _lock = RunLock::acquire(&dir)?;

    let names = (0..args.channels).map(|c| format!("ch{c}")).collect();
    let stream = windows_to_stream(&windows, args.rate, names);
    let schema = StreamSchema {
        attribute_column: Some("attribute_id".into()),
        ..StreamSchema::default()
    };
    write_stream(&dir.join("synth.csv"), &stream, &schema)?;

    let seconds = args.length as f64 / args.rate;
    let run = RunConfig {
        dataset: DatasetConfig {
            name: "synth".into(),
            paths: vec!["synth.csv".into()],
            sample_rate_hz: args.rate,
            window_seconds: seconds,
            step_seconds: seconds,
            attribute_column: Some("attribute_id".into()),
            ..DatasetConfig::default()
        },
        network: NetworkSection {
            block_channels: vec![32; 3],
            head_dim: 32,
            ..NetworkSection::default()
        },
        train: siamtcn_core::TrainConfig {
            max_epochs: 6,
            patience: 2,
            pairs_per_epoch: Some(1000),
            ..Default::default()
        },
        ..RunConfig::default()
    };
    write_text(&dir.join("dataset.toml"), &run.to_toml())?;
    println!("wrote {} windows to {}", windows.len(), dir.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// multi, single:act, single:pers, partial or tri
    #[arg(long)]
    pub mode: Option<TrainMode>,
    /// Output directory [default: $SIAMTCN_OUT_ROOT/<dataset>-<mode>-s<seed>]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub pairs_per_epoch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
}

impl TrainArgs {
    /// Command-line values take precedence over the file.
    fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if let Some(v) = self.mode {
            t.mode = v;
        }
        if let Some(v) = self.epochs {
            t.max_epochs = v;
        }
        if let Some(v) = self.pairs_per_epoch {
            t.pairs_per_epoch = Some(v);
        }
        if let Some(v) = self.lr {
            t.lr0 = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.patience {
            t.patience = v;
        }
    }
}

struct Progress {
    log: File,
}

impl Write for Progress {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.log.write_all(buf)?;
        io::stderr().write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.log.flush()
    }
}

pub fn train_run(args: TrainArgs) -> CliResult<()> {
    let (mut cfg, base) = RunConfig::load(&args.config)?;
    args.apply(&mut cfg);
    cfg.train.validate()?;
    let data = prepare_data(&cfg, &base)?;
    let mode = cfg.train.mode;
    let name = format!(
        "{}-{}-s{}",
        cfg.dataset.name,
        mode.to_string().replace(':', "-"),
        cfg.train.seed
    );
    let dir = output_dir(args.out.clone(), &name);
    let _lock = RunLock::acquire(&dir)?;

    let input_channels = data.windows[0].channels();
    let net = Network::build(cfg.network.resolve(input_channels, mode), cfg.train.seed)?;
    let param_count = net.param_count();
    eprintln!(
        "training {mode} on {} windows ({} train / {} val / {} test), {param_count} parameters",
        data.windows.len(),
        data.split.train.len(),
        data.split.val.len(),
        data.split.test.len()
    );
    let log_path = dir.join(TRAIN_LOG);
    let mut progress = Progress {
        log: File::create(&log_path).map_err(|e| CliError::write(&log_path, e))?,
    };
    let outcome = train(
        net,
        &TrainData {
            windows: &data.windows,
            train: &data.split.train,
            val: &data.split.val,
        },
        &cfg.train,
        Some(&mut progress),
    )?;
    save_checkpoint(&dir.join(CHECKPOINT), &outcome.best)?;

    let network = &outcome.best.network;
    let seed = cfg.eval.kmeans_seed;
    let test_metrics = evaluate_heads(network, &data.windows, &data.split.test, seed)?;
    let raw = network
        .tasks()
        .into_iter()
        .map(|task| {
            let k = class_count(&data.windows, &data.split.test, task)?;
            raw_baseline(&data.windows, &data.split.test, task, k, seed)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let manifest = Manifest {
        tool: format!("siamtcn {}", env!("CARGO_PKG_VERSION")),
        dataset_base: base,
        input_channels,
        windows: data.windows.len(),
        split: SplitSizes {
            train: data.split.train.len(),
            val: data.split.val.len(),
            test: data.split.test.len(),
        },
        param_count,
        epochs_run: outcome.history.epochs.len(),
        best_epoch: outcome.history.best_epoch,
        checkpoint: CHECKPOINT.into(),
        checkpoint_crc32: network.checksum(),
        matching: MATCHING_METHOD.into(),
        test_metrics,
        raw_baseline: raw,
        config: cfg,
    };
    manifest.write(&dir)?;
    print!("{}", format_report(&manifest.test_metrics));
    println!("run written to {}", dir.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
}

fn load_run(run: &Path) -> CliResult<(Manifest, siamtcn_core::Checkpoint)> {
    let manifest = Manifest::read(run)?;
    let ckpt = load_checkpoint(&run.join(&manifest.checkpoint))?;
    if ckpt.network.checksum() != manifest.checkpoint_crc32 {
        return Err(CliError::Verification(format!(
            "checkpoint in {} does not match its manifest",
            run.display()
        )));
    }
    Ok((manifest, ckpt))
}

/// Re-scores a saved run. On the test split the result must equal the
/// metrics recorded at training time.
pub fn eval(args: EvalArgs) -> CliResult<()> {
    let (manifest, ckpt) = load_run(&args.run)?;
    let _lock = RunLock::acquire(&args.run)?;
    let data = prepare_data(&manifest.config, &manifest.dataset_base)?;
    let indices = args.split.indices(&data);
    let metrics = evaluate_heads(
        &ckpt.network,
        &data.windows,
        &indices,
        manifest.config.eval.kmeans_seed,
    )?;
    print!("{}", format_report(&metrics));
    write_json(
        &args.run.join(format!("eval_{}.json", args.split.name())),
        &metrics,
    )?;
    if args.split == SplitName::Test {
        if metrics != manifest.test_metrics {
            return Err(CliError::Verification(
                "test metrics differ from the ones recorded in the manifest".into(),
            ));
        }
        println!("test metrics match the manifest");
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitName::All)]
    pub split: SplitName,
    /// Output file [default: <run>/embeddings_<split>.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn embed(args: EmbedArgs) -> CliResult<()> {
    let (manifest, ckpt) = load_run(&args.run)?;
    let _lock = RunLock::acquire(&args.run)?;
    let data = prepare_data(&manifest.config, &manifest.dataset_base)?;
    let indices = args.split.indices(&data);
    let path = args.out.unwrap_or_else(|| {
        args.run
            .join(format!("embeddings_{}.csv", args.split.name()))
    });
    export_embeddings(&ckpt.network, &data.windows, &indices, &path)?;
    println!("wrote {} rows to {}", indices.len(), path.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Accepted random instances per check.
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn gradcheck_run(args: GradcheckArgs) -> CliResult<()> {
    let reports = gradcheck::run_all(args.instances, args.seed)?;
    println!(
        "{:<20} {:>9} {:>9} {:>13} {:>9}  result",
        "check", "instances", "rejected", "max_rel_err", "tol"
    );
    let mut worst: f64 = 0.0;
    for r in &reports {
        worst = worst.max(r.max_rel_error);
        println!(
            "{:<20} {:>9} {:>9} {:>13.3e} {:>9.0e}  {}",
            r.name,
            r.instances,
            r.rejected,
            r.max_rel_error,
            r.tolerance,
            if r.passed() { "pass" } else { "FAIL" }
        );
    }
    println!("max relative error over the suite: {worst:.3e}");
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory holding run directories [default: $SIAMTCN_OUT_ROOT or ./runs]
    #[arg(long)]
    pub root: Option<PathBuf>,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn report_run(args: ReportArgs) -> CliResult<()> {
    let root = args.root.unwrap_or_else(|| {
        std::env::var_os(OUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| "runs".into())
    });
    let runs = report::collect_runs(&root)?;
    if runs.is_empty() {
        return Err(CliError::missing(
            root.join("*/manifest.json"),
            io::Error::new(io::ErrorKind::NotFound, "no run manifests found"),
        ));
    }
    let text = report::render(&runs);
    print!("{text}");
    if let Some(path) = args.out {
        write_text(&path, &text)?;
    }
    Ok(())
}
