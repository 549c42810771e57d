//! Acceptance suite: one `[PASS]`/`[FAIL]` line per criterion. Exits
//! non-zero if any gating criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use siamtcn_core::data::{
    load_windows, segment_samples, split_train_val_test, synth_generate, window_count,
    DatasetConfig, Split,
};
use siamtcn_core::eval::{
    class_count, embed_windows, evaluate_heads, match_and_accuracy, mean_f1, raw_baseline,
};
use siamtcn_core::gradcheck;
use siamtcn_core::loss::{contrastive, multitask_loss};
use siamtcn_core::train::{lr_at, train, TrainData};
use siamtcn_core::{
    load_checkpoint, save_checkpoint, EmbeddingSet, LossConfig, Network, NetworkConfig,
    SimilarityLabel, SynthConfig, Task, Tensor, TrainConfig, TrainMode, TrainOutcome, Window,
};

use common::{brute_force_accuracy, enumerate_window_starts, ramp_stream};

const SEEDS: [u64; 3] = [0, 1, 2];
const TRAIN_BUDGET: Duration = Duration::from_secs(600);
const GRADCHECK_BUDGET: Duration = Duration::from_secs(60);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct RunResult {
    accuracy: BTreeMap<Task, f64>,
    train_time: Duration,
}

/// Synthetic set shared by the learning criteria, with memoized training runs.
struct Bench {
    windows: Vec<Window>,
    split: Split,
    runs: BTreeMap<(String, u64), RunResult>,
}

impl Bench {
    fn new() -> Self {
        let windows = synth_generate(&SynthConfig::default()).expect("synthetic set");
        let split = split_train_val_test(&windows, [0.7, 0.15, 0.15], 0).expect("split");
        Self {
            windows,
            split,
            runs: BTreeMap::new(),
        }
    }

    fn train_config(mode: TrainMode, seed: u64) -> TrainConfig {
        TrainConfig {
            max_epochs: 6,
            patience: 2,
            pairs_per_epoch: Some(1000),
            mode,
            seed,
            ..TrainConfig::default()
        }
    }

    fn network(mode: TrainMode, seed: u64) -> Network {
        let cfg = mode.network_config(
            NetworkConfig {
                block_channels: vec![32; 3],
                ..NetworkConfig::default()
            },
            32,
        );
        Network::build(cfg, seed).expect("network")
    }

    fn train(&self, mode: TrainMode, seed: u64, cfg: &TrainConfig) -> TrainOutcome {
        let data = TrainData {
            windows: &self.windows,
            train: &self.split.train,
            val: &self.split.val,
        };
        train(Self::network(mode, seed), &data, cfg, None).expect("training")
    }

    fn run(&mut self, mode: TrainMode, seed: u64) -> &RunResult {
        let key = (mode.to_string(), seed);
        if !self.runs.contains_key(&key) {
            let started = Instant::now();
            let out = self.train(mode, seed, &Self::train_config(mode, seed));
            let train_time = started.elapsed();
            let accuracy = evaluate_heads(&out.best.network, &self.windows, &self.split.test, 0)
                .expect("evaluation")
                .into_iter()
                .map(|m| (m.task, m.accuracy))
                .collect();
            self.runs.insert(
                key.clone(),
                RunResult {
                    accuracy,
                    train_time,
                },
            );
        }
        &self.runs[&key]
    }
}

fn gradient_fidelity() -> Outcome {
    let started = Instant::now();
    let reports = match gradcheck::run_all(100, 0) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("gradcheck failed to run: {e}")),
    };
    let elapsed = started.elapsed();
    let worst = reports
        .iter()
        .max_by(|a, b| (a.max_rel_error / a.tolerance).total_cmp(&(b.max_rel_error / b.tolerance)))
        .unwrap();
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.as_str())
        .collect();
    outcome(
        failed.is_empty() && elapsed < GRADCHECK_BUDGET,
        format!(
            "{} checks x 100 instances, worst {} at {:.2e} (tol {:.0e}), failed {:?}, {:.1} s < 60 s",
            reports.len(),
            worst.name,
            worst.max_rel_error,
            worst.tolerance,
            failed,
            elapsed.as_secs_f64()
        ),
    )
}

fn loss_identities() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let mut ok = vec![
        contrastive(0.0, true, 2.0) == 0.0,
        contrastive(3.0, false, 2.0) == 0.0,
        close(contrastive(1.0, false, 2.0), 0.5),
        close(contrastive(2.0, true, 2.0), 2.0),
    ];

    // act: negative pair at D = 1 under margin 2 -> 0.5; pers: positive pair with D² = 0.5 -> 0.25
    let set = |act: [f64; 2], pers: [f64; 2]| {
        let mut s = EmbeddingSet::default();
        s.insert(
            Task::Activity,
            Tensor::new(vec![1, 2], act.to_vec()).unwrap(),
        );
        s.insert(
            Task::Person,
            Tensor::new(vec![1, 2], pers.to_vec()).unwrap(),
        );
        s
    };
    let a = set([0.0, 0.0], [0.5, 0.5]);
    let b = set([1.0, 0.0], [0.0, 0.0]);
    let cfg = LossConfig {
        margin: 2.0,
        ..LossConfig::default()
    };
    let label = SimilarityLabel::new()
        .with(Task::Activity, false)
        .with(Task::Person, true);
    let full = multitask_loss(&a, &b, &[label], &cfg).unwrap().total;
    let masked = multitask_loss(&a, &b, &[label.mask(Task::Person)], &cfg)
        .unwrap()
        .total;
    let coincident = multitask_loss(&a, &a, &[label.with(Task::Activity, true)], &cfg)
        .unwrap()
        .total;
    ok.push(close(full, 0.75));
    ok.push(close(masked, 0.5));
    ok.push(coincident == 0.0);
    let passed = ok.iter().filter(|&&b| b).count();
    outcome(
        passed == ok.len(),
        format!(
            "{passed}/{} identities hold (weighted 0.75 -> {full}, masked 0.5 -> {masked})",
            ok.len()
        ),
    )
}

fn lr_schedule() -> Outcome {
    let cfg = TrainConfig::default();
    let expected = [(0, 0.05), (5000, 0.05), (10000, 0.0475), (20000, 0.045125)];
    let got: Vec<f64> = expected.iter().map(|&(s, _)| lr_at(s, &cfg)).collect();
    let pass = expected.iter().zip(&got).all(|(&(_, e), &g)| e == g);
    outcome(pass, format!("steps 0/5000/10000/20000 -> {got:?}"))
}

fn multitask_learning(bench: &mut Bench) -> Outcome {
    let run = bench.run(TrainMode::Multi, SEEDS[0]);
    let (act, pers, secs) = (
        run.accuracy[&Task::Activity],
        run.accuracy[&Task::Person],
        run.train_time,
    );
    let mut raw = BTreeMap::new();
    for task in [Task::Activity, Task::Person] {
        let k = class_count(&bench.windows, &bench.split.test, task).unwrap();
        raw.insert(
            task,
            raw_baseline(&bench.windows, &bench.split.test, task, k, 0)
                .unwrap()
                .accuracy,
        );
    }
    let raw_gap = raw.values().any(|&a| a <= 0.70);
    outcome(
        act >= 0.90 && pers >= 0.90 && raw_gap && secs <= TRAIN_BUDGET,
        format!(
            "act {act:.4}, pers {pers:.4} (>= 0.90); raw k-means act {:.4}, pers {:.4} (one <= 0.70); trained in {:.1} s (<= 600 s)",
            raw[&Task::Activity],
            raw[&Task::Person],
            secs.as_secs_f64()
        ),
    )
}

fn ablation(bench: &mut Bench) -> Outcome {
    let mut worst = f64::INFINITY;
    let mut parts = Vec::new();
    for seed in SEEDS {
        for task in [Task::Activity, Task::Person] {
            let multi = bench.run(TrainMode::Multi, seed).accuracy[&task];
            let single = bench.run(TrainMode::Single(task), seed).accuracy[&task];
            worst = worst.min(multi - single);
            parts.push(format!("s{seed} {task} {multi:.3}/{single:.3}"));
        }
    }
    outcome(
        worst >= -0.05,
        format!(
            "multi/single per seed and task: {}; worst multi - single {worst:+.4} (>= -0.05)",
            parts.join(", ")
        ),
    )
}

fn partial_information(bench: &mut Bench) -> Outcome {
    let mut worst = f64::INFINITY;
    let mut parts = Vec::new();
    for seed in SEEDS {
        for task in [Task::Activity, Task::Person] {
            let full = bench.run(TrainMode::Multi, seed).accuracy[&task];
            let partial = bench.run(TrainMode::Partial, seed).accuracy[&task];
            worst = worst.min(partial - full);
            parts.push(format!("s{seed} {task} {partial:.3}/{full:.3}"));
        }
    }
    outcome(
        worst >= -0.07,
        format!(
            "partial/full per seed and task: {}; worst partial - full {worst:+.4} (>= -0.07)",
            parts.join(", ")
        ),
    )
}

fn tri_output(bench: &mut Bench) -> Outcome {
    let seed = SEEDS[0];
    let tri = bench.run(TrainMode::Tri, seed).accuracy.clone();
    let dual = bench.run(TrainMode::Multi, seed).accuracy.clone();
    let attr = tri[&Task::Attribute];
    let drop_act = dual[&Task::Activity] - tri[&Task::Activity];
    let drop_pers = dual[&Task::Person] - tri[&Task::Person];
    outcome(
        attr >= 0.85 && drop_act <= 0.05 && drop_pers <= 0.05,
        format!("attr {attr:.4} (>= 0.85); act drop {drop_act:+.4}, pers drop {drop_pers:+.4} (<= 0.05)"),
    )
}

fn oracle_equivalences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut hungarian_bad = 0;
    for _ in 0..1000 {
        let k = rng.random_range(1..=6);
        let n = rng.random_range(1..80);
        let assign: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let truth: Vec<u32> = (0..n).map(|_| rng.random_range(0..k as u32)).collect();
        let got = match_and_accuracy(&assign, &truth).unwrap().accuracy;
        if (got - brute_force_accuracy(&assign, &truth, k)).abs() > 1e-12 {
            hungarian_bad += 1;
        }
    }
    let mut segment_bad = 0;
    for _ in 0..1000 {
        let (len, win, step) = (
            rng.random_range(0..500),
            rng.random_range(1..100),
            rng.random_range(1..50),
        );
        let starts = enumerate_window_starts(len, win, step);
        let windows = segment_samples(&ramp_stream(len), win, step).unwrap();
        let closed_form = if len < win { 0 } else { (len - win) / step + 1 };
        if window_count(len, win, step) != closed_form
            || windows.len() != closed_form
            || windows
                .iter()
                .map(|w| w.source.start)
                .ne(starts.iter().copied())
        {
            segment_bad += 1;
        }
    }
    let f1 = |p: &[u32], t: &[u32]| {
        let p: Vec<Option<u32>> = p.iter().map(|&c| Some(c)).collect();
        mean_f1(&p, t).unwrap().mean_f1
    };
    let f1_ok = (f1(&[0, 1], &[0, 1]) - 1.0).abs() < 1e-12
        && (f1(&[0, 0, 1, 1], &[0, 1, 1, 1]) - 11.0 / 15.0).abs() < 1e-12
        && (f1(&[0, 0, 0, 0], &[0, 0, 1, 1]) - 1.0 / 3.0).abs() < 1e-12;
    let acc_ok = match_and_accuracy(&[0, 0, 1, 1], &[1, 1, 0, 0])
        .unwrap()
        .accuracy
        == 1.0
        && (match_and_accuracy(&[0, 1, 1], &[0, 0, 1]).unwrap().accuracy - 2.0 / 3.0).abs() < 1e-12;
    outcome(
        hungarian_bad == 0 && segment_bad == 0 && f1_ok && acc_ok,
        format!(
            "Hungarian vs brute force mismatches {hungarian_bad}/1000, segmentation mismatches {segment_bad}/1000, F_m examples {}, accuracy examples {}",
            if f1_ok { "ok" } else { "wrong" },
            if acc_ok { "ok" } else { "wrong" }
        ),
    )
}

fn determinism(bench: &Bench) -> Outcome {
    let cfg = TrainConfig {
        max_epochs: 2,
        pairs_per_epoch: Some(640),
        ..Bench::train_config(TrainMode::Multi, 11)
    };
    let a = bench.train(TrainMode::Multi, 11, &cfg);
    let b = bench.train(TrainMode::Multi, 11, &cfg);
    let same_history = a.history.same_trajectory(&b.history);
    let same_weights = a.best.to_bytes().unwrap() == b.best.to_bytes().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.wsmt");
    save_checkpoint(&path, &a.best).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let all: Vec<usize> = (0..bench.windows.len()).collect();
    let before = embed_windows(&a.best.network, &bench.windows, &all, 256).unwrap();
    let after = embed_windows(&loaded.network, &bench.windows, &all, 256).unwrap();
    let same_embeddings = before.general == after.general && before.tasks == after.tasks;
    outcome(
        same_history && same_weights && same_embeddings,
        format!(
            "histories identical: {same_history}, best weights identical: {same_weights}, embeddings after save/load identical: {same_embeddings} ({} windows)",
            all.len()
        ),
    )
}

/// Optional real-data run; only attempted when a dataset config is supplied.
fn stretch_real_data() -> Option<Outcome> {
    let path = PathBuf::from(std::env::var_os("SIAMTCN_PAMAP2_CONFIG")?);
    let cfg: DatasetConfig = match std::fs::read_to_string(&path)
        .map_err(|e| e.to_string())
        .and_then(|t| toml::from_str(&t).map_err(|e| e.to_string()))
    {
        Ok(c) => c,
        Err(e) => {
            return Some(outcome(
                false,
                format!("could not read {}: {e}", path.display()),
            ))
        }
    };
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    let windows = match load_windows(&cfg, &base) {
        Ok(w) => w,
        Err(e) => {
            return Some(outcome(
                false,
                format!("could not load {}: {e}", path.display()),
            ))
        }
    };
    let split = split_train_val_test(&windows, [0.7, 0.15, 0.15], 0).ok()?;
    let channels = windows[0].channels();
    let net = Network::build(
        NetworkConfig {
            input_channels: channels,
            ..NetworkConfig::default()
        },
        0,
    )
    .ok()?;
    let data = TrainData {
        windows: &windows,
        train: &split.train,
        val: &split.val,
    };
    let out = train(net, &data, &TrainConfig::default(), None).ok()?;
    let metrics = evaluate_heads(&out.best.network, &windows, &split.test, 0).ok()?;
    let f1: Vec<String> = metrics
        .iter()
        .map(|m| format!("{} F_m {:.4}", m.task, m.mean_f1))
        .collect();
    Some(outcome(
        metrics.iter().all(|m| m.mean_f1 >= 0.90),
        f1.join(", "),
    ))
}

fn main() -> ExitCode {
    let mut bench = Bench::new();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |n: u32, title: &'static str, o: Outcome| {
        println!(
            "[{}] criterion {n}: {title}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((n, title, o));
    };
    report(1, "gradient fidelity", gradient_fidelity());
    report(2, "loss identities", loss_identities());
    report(3, "learning-rate schedule", lr_schedule());
    report(
        4,
        "multi-task learning on synthetic data",
        multitask_learning(&mut bench),
    );
    report(
        5,
        "multi-task vs single-task ablation",
        ablation(&mut bench),
    );
    report(
        6,
        "partial-information mode",
        partial_information(&mut bench),
    );
    report(7, "tri-output scaling", tri_output(&mut bench));
    report(8, "oracle equivalences", oracle_equivalences());
    report(9, "determinism and persistence", determinism(&bench));
    match stretch_real_data() {
        Some(o) => println!(
            "[{}] criterion 10 (optional, not gating): real-data stretch run: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        ),
        None => println!("[SKIP] criterion 10 (optional, not gating): set SIAMTCN_PAMAP2_CONFIG to a dataset TOML to run"),
    }
    let failed = results.iter().filter(|(_, _, o)| !o.pass).count();
    println!(
        "acceptance: {}/{} gating criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
