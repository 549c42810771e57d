//! Plain SGD with a staircase exponential learning-rate decay and
//! validation-loss early stopping.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, RngState};
use crate::data::{batch_of, partial_split, sample_pairs_within, PairItem, PartialSplit, Window};
use crate::error::{Error, Result};
use crate::eval::embed_windows;
use crate::loss::{multitask_loss, LossConfig};
use crate::siamese::{EmbeddingSet, HeadSpec, Network, NetworkConfig};
use crate::task::Task;
use crate::tcn::Mode;
use crate::tensor::{ParamTensor, Real, Tensor};

/// Which similarity information the model is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TrainMode {
    /// Activity and person heads, both labels on every pair.
    Multi,
    /// Only one task's pairs and loss; the other head gets zero weight.
    Single(Task),
    /// Disjoint halves, each providing only one task's similarity.
    Partial,
    /// Activity, person and attribute heads.
    Tri,
}

impl TrainMode {
    /// Tasks whose similarity labels are sampled.
    pub fn sampled_tasks(self) -> Vec<Task> {
        match self {
            TrainMode::Multi | TrainMode::Partial => vec![Task::Activity, Task::Person],
            TrainMode::Single(t) => vec![t],
            TrainMode::Tri => Task::ALL.to_vec(),
        }
    }

    /// Tasks that get a head in the network.
    pub fn head_tasks(self) -> Vec<Task> {
        match self {
            TrainMode::Tri => Task::ALL.to_vec(),
            TrainMode::Single(Task::Attribute) => {
                vec![Task::Activity, Task::Person, Task::Attribute]
            }
            _ => vec![Task::Activity, Task::Person],
        }
    }

    /// Task weights for this mode: unsampled tasks get weight 0, sampled
    /// tasks keep the configured weight (default 1).
    pub fn loss_config(self, base: &LossConfig) -> LossConfig {
        let sampled = self.sampled_tasks();
        LossConfig {
            margin: base.margin,
            weights: self
                .head_tasks()
                .into_iter()
                .map(|t| {
                    let w = if sampled.contains(&t) {
                        base.weights.get(&t).copied().unwrap_or(1.0)
                    } else {
                        0.0
                    };
                    (t, w)
                })
                .collect(),
        }
    }

    /// Replaces the heads of `cfg` with one head of `dim` per head task.
    pub fn network_config(self, mut cfg: NetworkConfig, dim: usize) -> NetworkConfig {
        cfg.heads = self
            .head_tasks()
            .into_iter()
            .map(|task| HeadSpec { task, dim })
            .collect();
        cfg
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainMode::Multi => f.write_str("multi"),
            TrainMode::Single(t) => write!(f, "single:{t}"),
            TrainMode::Partial => f.write_str("partial"),
            TrainMode::Tri => f.write_str("tri"),
        }
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi" => Ok(TrainMode::Multi),
            "partial" => Ok(TrainMode::Partial),
            "tri" => Ok(TrainMode::Tri),
            _ => match s.strip_prefix("single:") {
                Some(task) => Ok(TrainMode::Single(task.parse()?)),
                None => Err(Error::Config(format!(
                    "unknown mode '{s}' (expected multi, single:act, single:pers, partial or tri)"
                ))),
            },
        }
    }
}

impl TryFrom<String> for TrainMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TrainMode> for String {
    fn from(m: TrainMode) -> String {
        m.to_string()
    }
}

/// How a batch's summed loss gradient is scaled before the SGD step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Step on the mean-per-pair gradient.
    #[default]
    Mean,
    /// Step on the raw batch sum; the learning rate must absorb the batch size.
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay_rate: f64,
    pub decay_every: u64,
    pub batch_size: usize,
    pub reduction: Reduction,
    pub max_epochs: usize,
    pub patience: usize,
    /// Training pairs drawn per epoch; `None` means 20 per training window.
    pub pairs_per_epoch: Option<usize>,
    /// Fixed validation pairs; `None` means 10 per validation window.
    pub val_pairs: Option<usize>,
    pub loss: LossConfig,
    pub mode: TrainMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.05,
            decay_rate: 0.95,
            decay_every: 10_000,
            batch_size: 64,
            reduction: Reduction::Mean,
            max_epochs: 100,
            patience: 10,
            pairs_per_epoch: None,
            val_pairs: None,
            loss: LossConfig::default(),
            mode: TrainMode::Multi,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0.is_finite() && self.lr0 > 0.0)
            || !(0.0..=1.0).contains(&self.decay_rate)
            || self.decay_rate == 0.0
        {
            return Err(Error::Config(
                "need lr0 > 0 and decay_rate in (0, 1]".into(),
            ));
        }
        if self.decay_every == 0
            || self.batch_size == 0
            || self.max_epochs == 0
            || self.patience == 0
        {
            return Err(Error::Config(
                "decay_every, batch_size, max_epochs and patience must be positive".into(),
            ));
        }
        self.mode.loss_config(&self.loss).validate()
    }
}

/// Staircase decay: `lr0 · decay_rate^⌊step / decay_every⌋`.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    let k = (step / cfg.decay_every) as i32;
    cfg.lr0 * cfg.decay_rate.powi(k)
}

/// `value ← value − lr·grad` for every parameter, then clears the
/// gradients. Nothing is updated if any gradient is non-finite.
pub fn sgd_step<T: Real>(params: &mut [&mut ParamTensor<T>], lr: f64) -> Result<()> {
    if let Some(i) = params.iter().position(|p| !p.grad.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient of parameter #{i} (shape {:?})",
            params[i].grad.shape()
        )));
    }
    let lr = T::from_f64_lossy(lr);
    for p in params.iter_mut() {
        let ParamTensor { value, grad } = &mut **p;
        for (v, g) in value.data_mut().iter_mut().zip(grad.data_mut()) {
            *v -= lr * *g;
            *g = T::zero();
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps taken when the epoch ended.
    pub step: u64,
    /// Mean weighted loss per training pair.
    pub train_loss: f64,
    /// Mean weighted loss per validation pair.
    pub val_loss: f64,
    /// Mean unweighted loss per validation pair, by task.
    pub val_per_task: BTreeMap<Task, f64>,
    /// `lr_at(step)`.
    pub lr: f64,
    pub elapsed_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    /// Equality of everything except wall-clock timings.
    pub fn same_trajectory(&self, other: &TrainHistory) -> bool {
        self.best_epoch == other.best_epoch
            && self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.step == b.step
                    && a.train_loss.to_bits() == b.train_loss.to_bits()
                    && a.val_loss.to_bits() == b.val_loss.to_bits()
                    && a.lr.to_bits() == b.lr.to_bits()
                    && a.val_per_task.len() == b.val_per_task.len()
                    && a.val_per_task
                        .iter()
                        .zip(&b.val_per_task)
                        .all(|(x, y)| x.0 == y.0 && x.1.to_bits() == y.1.to_bits())
            })
    }
}

/// Patience-based stopping on a strictly decreasing validation loss.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            stale: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = Some(epoch);
            self.stale = 0;
            StopDecision::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// Windows plus the index sets used for training and validation.
pub struct TrainData<'a> {
    pub windows: &'a [Window],
    pub train: &'a [usize],
    pub val: &'a [usize],
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub best: Checkpoint,
    pub history: TrainHistory,
}

fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(epoch)
}

const VALIDATION_STREAM: u64 = u64::MAX;

enum PairSource {
    Pool(Vec<usize>, Vec<Task>),
    Partial(PartialSplit),
}

impl PairSource {
    fn new(mode: TrainMode, pool: &[usize], seed: u64) -> Result<Self> {
        Ok(match mode {
            TrainMode::Partial => PairSource::Partial(partial_split(pool, seed)?),
            m => PairSource::Pool(pool.to_vec(), m.sampled_tasks()),
        })
    }

    fn sample(
        &self,
        windows: &[Window],
        count: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<PairItem>> {
        match self {
            PairSource::Pool(pool, tasks) => sample_pairs_within(windows, pool, count, tasks, rng),
            PairSource::Partial(split) => split.sample(windows, count, rng),
        }
    }
}

/// Loss of one batch of pairs through the network in train mode, with
/// gradients accumulated into `net`. Returns the weighted batch sum.
pub fn train_batch<T: Real>(
    net: &mut Network<T>,
    x_a: &Tensor<T>,
    x_b: &Tensor<T>,
    pairs: &[PairItem],
    loss_cfg: &LossConfig,
) -> Result<T> {
    let (ea, eb, cache) = net.forward_pair(x_a, x_b, Mode::Train)?;
    let labels: Vec<_> = pairs.iter().map(|p| p.label).collect();
    let loss = multitask_loss(&ea, &eb, &labels, loss_cfg)?;
    net.backward_pair(&cache, &loss.grads_a, &loss.grads_b)?;
    net.update_running(&cache.a);
    net.update_running(&cache.b);
    Ok(loss.total)
}

/// Mean weighted and per-task losses of fixed pairs in eval mode.
fn validation_loss(
    net: &Network<f32>,
    windows: &[Window],
    val_pool: &[usize],
    pairs: &[PairItem],
    loss_cfg: &LossConfig,
) -> Result<(f64, BTreeMap<Task, f64>)> {
    let embedded = embed_windows(net, windows, val_pool, 256)?;
    let pos: BTreeMap<usize, usize> = val_pool.iter().enumerate().map(|(r, &i)| (i, r)).collect();
    let rows_a: Vec<usize> = pairs.iter().map(|p| pos[&p.a]).collect();
    let rows_b: Vec<usize> = pairs.iter().map(|p| pos[&p.b]).collect();
    let pick = |rows: &[usize]| EmbeddingSet {
        by_task: embedded
            .tasks
            .iter()
            .map(|(t, e)| (*t, e.select_rows(rows).cast::<f64>()))
            .collect(),
    };
    let labels: Vec<_> = pairs.iter().map(|p| p.label).collect();
    let loss = multitask_loss(&pick(&rows_a), &pick(&rows_b), &labels, loss_cfg)?;
    let per_task = loss
        .per_task
        .iter()
        .map(|(t, &v)| (*t, v / loss.counts[t].max(1) as f64))
        .collect();
    Ok((loss.total / pairs.len() as f64, per_task))
}

/// Runs SGD until validation loss stops improving for `patience` epochs or
/// `max_epochs` is reached. Per-epoch records are appended to `log` as JSON
/// lines when given.
pub fn train(
    mut net: Network<f32>,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Degenerate(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let loss_cfg = cfg.mode.loss_config(&cfg.loss);
    for (&task, &w) in &loss_cfg.weights {
        if w > 0.0 && net.head(task).is_none() {
            return Err(Error::Config(format!(
                "mode {} needs a '{task}' head",
                cfg.mode
            )));
        }
    }
    let train_source = PairSource::new(
        cfg.mode,
        data.train,
        epoch_seed(cfg.seed, VALIDATION_STREAM - 1),
    )?;
    let val_source = PairSource::new(
        cfg.mode,
        data.val,
        epoch_seed(cfg.seed, VALIDATION_STREAM - 2),
    )?;
    let pairs_per_epoch = cfg.pairs_per_epoch.unwrap_or(20 * data.train.len());
    let n_val_pairs = cfg.val_pairs.unwrap_or(10 * data.val.len());
    let val_pairs = val_source.sample(
        data.windows,
        n_val_pairs,
        &mut ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, VALIDATION_STREAM)),
    )?;

    let started = Instant::now();
    let mut history = TrainHistory::default();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best: Option<Checkpoint> = None;
    let mut step: u64 = 0;
    net.zero_grads();
    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch as u64));
        let pairs = train_source.sample(data.windows, pairs_per_epoch, &mut rng)?;
        let mut epoch_loss = 0.0f64;
        for chunk in pairs.chunks(cfg.batch_size) {
            let ia: Vec<usize> = chunk.iter().map(|p| p.a).collect();
            let ib: Vec<usize> = chunk.iter().map(|p| p.b).collect();
            let x_a = batch_of(data.windows, &ia)?;
            let x_b = batch_of(data.windows, &ib)?;
            let batch_loss = train_batch(&mut net, &x_a, &x_b, chunk, &loss_cfg)?;
            epoch_loss += batch_loss as f64;
            let scale = match cfg.reduction {
                Reduction::Mean => chunk.len() as f64,
                Reduction::Sum => 1.0,
            };
            sgd_step(&mut net.params_mut(), lr_at(step, cfg) / scale)?;
            step += 1;
        }
        let (val_loss, val_per_task) =
            validation_loss(&net, data.windows, data.val, &val_pairs, &loss_cfg)?;
        let record = EpochRecord {
            epoch,
            step,
            train_loss: epoch_loss / pairs.len().max(1) as f64,
            val_loss,
            val_per_task,
            lr: lr_at(step, cfg),
            elapsed_secs: started.elapsed().as_secs_f64(),
        };
        if !(record.train_loss.is_finite() && record.val_loss.is_finite()) {
            return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
        }
        if let Some(w) = log.as_deref_mut() {
            let line = serde_json::to_string(&record)?;
            writeln!(w, "{line}").map_err(|e| Error::io("training log", e))?;
        }
        history.epochs.push(record);
        let decision = stopper.update(epoch, val_loss);
        if decision == StopDecision::Improved {
            best = Some(Checkpoint {
                network: net.clone(),
                step,
                epoch,
                rng: RngState {
                    seed: cfg.seed,
                    next_epoch: epoch as u64 + 1,
                },
            });
        }
        if decision == StopDecision::Stop {
            break;
        }
    }
    history.best_epoch = stopper.best_epoch();
    let best =
        best.ok_or_else(|| Error::NonFinite("no epoch produced a finite validation loss".into()))?;
    Ok(TrainOutcome { best, history })
}

/// Appends history records to a JSON-lines file.
pub fn append_log(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for r in records {
        writeln!(f, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
