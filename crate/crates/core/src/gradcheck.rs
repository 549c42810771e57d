//! Finite-difference verification of every hand-written backward pass.
//!
//! Each check draws random small instances in `f64`, computes the analytic
//! gradient of a scalar probe loss and compares it with central differences.
//! Instances whose forward pass lies within [`KINK_MARGIN`] of a
//! non-differentiable point (ReLU at zero, a max-pool tie, the contrastive
//! hinge or `D = 0`) are redrawn, since finite differences are meaningless
//! there.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::loss::{
    contrastive, contrastive_grad, multitask_loss, pair_distance, LossConfig, SimilarityLabel,
};
use crate::siamese::{EmbeddingSet, HeadSpec, Network, NetworkConfig};
use crate::task::Task;
use crate::tcn::{
    relu, relu_backward, temporal_max_pool, temporal_max_pool_backward, BatchNorm, Conv1d, Mode,
    TcnBlock, TcnLayer,
};
use crate::tensor::{
    finite_diff_grad, matvec_like, matvec_like_backward, max_relative_error, ParamTensor, Tensor,
};

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const LOSS_TOLERANCE: f64 = 1e-6;
pub const KINK_MARGIN: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub name: String,
    pub instances: usize,
    pub rejected: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// analytic and numeric gradients, flattened in the same order
type Instance = Option<(Vec<f64>, Vec<f64>)>;

type CheckFn = fn(&mut ChaCha8Rng) -> Result<Instance>;

pub const CHECKS: [(&str, f64, CheckFn); 10] = [
    ("dilated_conv", TOLERANCE, check_conv),
    ("batchnorm_train", TOLERANCE, check_bn_train),
    ("batchnorm_eval", TOLERANCE, check_bn_eval),
    ("relu", TOLERANCE, check_relu),
    ("max_pool", TOLERANCE, check_pool),
    ("tcn_block_residual", TOLERANCE, check_block),
    ("linear_head", TOLERANCE, check_head),
    ("contrastive", LOSS_TOLERANCE, check_contrastive),
    ("multitask_loss", TOLERANCE, check_multitask),
    ("network", TOLERANCE, check_network),
];

/// Runs one check until `instances` instances were accepted.
pub fn run_check(
    name: &str,
    tolerance: f64,
    check: CheckFn,
    instances: usize,
    seed: u64,
) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradcheckReport {
        name: name.to_string(),
        instances: 0,
        rejected: 0,
        max_rel_error: 0.0,
        tolerance,
    };
    while report.instances < instances {
        match check(&mut rng)? {
            Some((analytic, numeric)) => {
                report.instances += 1;
                report.max_rel_error = report
                    .max_rel_error
                    .max(max_relative_error(&analytic, &numeric));
            }
            None => {
                report.rejected += 1;
                if report.rejected > 20 * instances.max(1) {
                    return Err(Error::Degenerate(format!(
                        "gradcheck '{name}': too many instances near non-differentiable points"
                    )));
                }
            }
        }
    }
    Ok(report)
}

pub fn run_all(instances: usize, seed: u64) -> Result<Vec<GradcheckReport>> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, (name, tol, f))| {
            run_check(name, *tol, *f, instances, seed.wrapping_add(i as u64))
        })
        .collect()
}

fn uniform(rng: &mut impl Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("sized")
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn numeric_input(x: &Tensor<f64>, loss: impl Fn(&Tensor<f64>) -> Result<f64>) -> Result<Vec<f64>> {
    Ok(finite_diff_grad(loss, x, EPS)?.into_data())
}

/// Central differences w.r.t. every tensor listed by `slots`, in order.
fn numeric_params<M: Clone>(
    model: &M,
    slots: fn(&mut M) -> Vec<&mut Tensor<f64>>,
    loss: &dyn Fn(&M) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let count = slots(&mut model.clone()).len();
    for i in 0..count {
        let mut m = model.clone();
        let start = slots(&mut m).swap_remove(i).clone();
        let g = finite_diff_grad(
            |p| {
                *slots(&mut m).swap_remove(i) = p.clone();
                loss(&m)
            },
            &start,
            EPS,
        )?;
        out.extend(g.into_data());
    }
    Ok(out)
}

fn check_conv(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let (b, cin, cout) = (
        rng.random_range(1..3),
        rng.random_range(1..4),
        rng.random_range(1..4),
    );
    let k = [1, 3, 5][rng.random_range(0..3)];
    let d = rng.random_range(1..4);
    let t = rng.random_range(3..10);
    let conv = Conv1d::<f64>::init(rng, cin, cout, k, d)?;
    let x = uniform(rng, vec![b, cin, t], -1.0, 1.0);
    let r = uniform(rng, vec![b, cout, t], -1.0, 1.0);

    let g = conv.backward(&x, &r)?;
    let mut analytic = g.input.into_data();
    analytic.extend(g.weight.into_data());
    analytic.extend(g.bias.into_data());

    let mut numeric = numeric_input(&x, |xp| Ok(dot(&conv.forward(xp)?, &r)))?;
    numeric.extend(numeric_params(
        &conv,
        |c| vec![&mut c.weight.value, &mut c.bias.value],
        &|c| Ok(dot(&c.forward(&x)?, &r)),
    )?);
    Ok(Some((analytic, numeric)))
}

fn random_bn(rng: &mut ChaCha8Rng, ch: usize) -> Result<BatchNorm<f64>> {
    let mut bn = BatchNorm::<f64>::new(ch, 0.9, 1e-5)?;
    bn.gamma.value = uniform(rng, vec![ch], 0.5, 1.5);
    bn.beta.value = uniform(rng, vec![ch], -0.5, 0.5);
    bn.running_mean = uniform(rng, vec![ch], -0.5, 0.5);
    bn.running_var = uniform(rng, vec![ch], 0.5, 2.0);
    Ok(bn)
}

fn check_bn(rng: &mut ChaCha8Rng, mode: Mode) -> Result<Instance> {
    let (b, ch, t) = (
        rng.random_range(1..4),
        rng.random_range(1..4),
        rng.random_range(2..8),
    );
    let bn = random_bn(rng, ch)?;
    let x = uniform(rng, vec![b, ch, t], -1.0, 1.0);
    let r = uniform(rng, vec![b, ch, t], -1.0, 1.0);

    let (_, cache) = bn.forward(&x, mode)?;
    let g = bn.backward(&cache, &r)?;
    let mut analytic = g.input.into_data();
    analytic.extend(g.gamma.into_data());
    analytic.extend(g.beta.into_data());

    let mut numeric = numeric_input(&x, |xp| Ok(dot(&bn.forward(xp, mode)?.0, &r)))?;
    numeric.extend(numeric_params(
        &bn,
        |n| vec![&mut n.gamma.value, &mut n.beta.value],
        &|n| Ok(dot(&n.forward(&x, mode)?.0, &r)),
    )?);
    Ok(Some((analytic, numeric)))
}

fn check_bn_train(rng: &mut ChaCha8Rng) -> Result<Instance> {
    check_bn(rng, Mode::Train)
}

fn check_bn_eval(rng: &mut ChaCha8Rng) -> Result<Instance> {
    check_bn(rng, Mode::Eval)
}

fn check_relu(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let shape = vec![rng.random_range(1..3), 2, rng.random_range(1..8)];
    let x = uniform(rng, shape, -1.0, 1.0);
    if x.data().iter().any(|v| v.abs() < KINK_MARGIN) {
        return Ok(None);
    }
    let r = uniform(rng, x.shape().to_vec(), -1.0, 1.0);
    let analytic = relu_backward(&x, &r).into_data();
    let numeric = numeric_input(&x, |xp| Ok(dot(&relu(xp), &r)))?;
    Ok(Some((analytic, numeric)))
}

fn check_pool(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let shape = vec![rng.random_range(1..3), 2, rng.random_range(2..10)];
    let x = uniform(rng, shape, -1.0, 1.0);
    let (y, cache) = temporal_max_pool(&x)?;
    if cache.min_gap(&x) < KINK_MARGIN {
        return Ok(None);
    }
    let r = uniform(rng, y.shape().to_vec(), -1.0, 1.0);
    let analytic = temporal_max_pool_backward(&cache, &r).into_data();
    let numeric = numeric_input(&x, |xp| Ok(dot(&temporal_max_pool(xp)?.0, &r)))?;
    Ok(Some((analytic, numeric)))
}

fn block_slots(b: &mut TcnBlock<f64>) -> Vec<&mut Tensor<f64>> {
    let mut out = Vec::new();
    for l in &mut b.layers {
        out.push(&mut l.conv.weight.value);
        out.push(&mut l.conv.bias.value);
        out.push(&mut l.norm.gamma.value);
        out.push(&mut l.norm.beta.value);
    }
    if let Some(p) = &mut b.residual {
        out.push(&mut p.weight.value);
        out.push(&mut p.bias.value);
    }
    out
}

/// A TCN block, with a 1×1 residual projection in roughly half the instances.
fn check_block(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let cin = rng.random_range(1..4);
    let cout = if rng.random_bool(0.5) {
        cin
    } else {
        cin + rng.random_range(1..3)
    };
    let (b, t) = (rng.random_range(1..3), rng.random_range(3..9));
    let mut layers = Vec::new();
    let mut ch = cin;
    for d in [1, 2] {
        layers.push(TcnLayer {
            conv: Conv1d::init(rng, ch, cout, 3, d)?,
            norm: random_bn(rng, cout)?,
        });
        ch = cout;
    }
    let residual = if cin != cout {
        Some(Conv1d::init(rng, cin, cout, 1, 1)?)
    } else {
        None
    };
    let mut block = TcnBlock::new(layers, residual)?;
    let x = uniform(rng, vec![b, cin, t], -1.0, 1.0);
    let r = uniform(rng, vec![b, cout, t], -1.0, 1.0);

    let (_, cache) = block.forward(&x, Mode::Train)?;
    if cache.min_relu_margin() < KINK_MARGIN {
        return Ok(None);
    }
    let reference = block.clone();
    let mut analytic = block.backward(&cache, &r)?.into_data();
    for slot in block_grads(&mut block) {
        analytic.extend_from_slice(slot.data());
    }

    let mut numeric = numeric_input(&x, |xp| Ok(dot(&reference.forward(xp, Mode::Train)?.0, &r)))?;
    numeric.extend(numeric_params(&reference, block_slots, &|m| {
        Ok(dot(&m.forward(&x, Mode::Train)?.0, &r))
    })?);
    Ok(Some((analytic, numeric)))
}

fn block_grads(b: &mut TcnBlock<f64>) -> Vec<&Tensor<f64>> {
    let mut out = Vec::new();
    for l in &b.layers {
        out.extend([
            &l.conv.weight.grad,
            &l.conv.bias.grad,
            &l.norm.gamma.grad,
            &l.norm.beta.grad,
        ]);
    }
    if let Some(p) = &b.residual {
        out.extend([&p.weight.grad, &p.bias.grad]);
    }
    out
}

#[derive(Clone)]
struct Linear {
    w: ParamTensor<f64>,
    b: ParamTensor<f64>,
}

fn check_head(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let (batch, din, dout) = (
        rng.random_range(1..4),
        rng.random_range(1..6),
        rng.random_range(1..5),
    );
    let lin = Linear {
        w: ParamTensor::new(uniform(rng, vec![dout, din], -1.0, 1.0)),
        b: ParamTensor::new(uniform(rng, vec![dout], -1.0, 1.0)),
    };
    let x = uniform(rng, vec![batch, din], -1.0, 1.0);
    let r = uniform(rng, vec![batch, dout], -1.0, 1.0);

    let g = matvec_like_backward(&lin.w, &x, &r)?;
    let mut analytic = g.input.into_data();
    analytic.extend(g.weights.into_data());
    analytic.extend(g.bias.into_data());

    let mut numeric = numeric_input(&x, |xp| Ok(dot(&matvec_like(&lin.w, xp, &lin.b)?, &r)))?;
    numeric.extend(numeric_params(
        &lin,
        |l| vec![&mut l.w.value, &mut l.b.value],
        &|l| Ok(dot(&matvec_like(&l.w, &x, &l.b)?, &r)),
    )?);
    Ok(Some((analytic, numeric)))
}

fn near_hinge(d: f64, similar: bool, margin: f64) -> bool {
    !similar && ((d - margin).abs() < KINK_MARGIN || d < KINK_MARGIN)
}

fn check_contrastive(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let dim = rng.random_range(1..6);
    let margin = 1.0;
    let similar = rng.random_bool(0.5);
    let ab = uniform(rng, vec![2 * dim], -0.6, 0.6);
    let (a, b) = ab.data().split_at(dim);
    if near_hinge(pair_distance(a, b)?, similar, margin) {
        return Ok(None);
    }
    let (ga, gb) = contrastive_grad(a, b, similar, margin)?;
    let analytic = [ga, gb].concat();
    let numeric = numeric_input(&ab, |p| {
        let (a, b) = p.data().split_at(dim);
        Ok(contrastive(pair_distance(a, b)?, similar, margin))
    })?;
    Ok(Some((analytic, numeric)))
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize, tasks: &[Task]) -> Vec<SimilarityLabel> {
    (0..n)
        .map(|_| {
            let mut l = SimilarityLabel::new();
            for &t in tasks {
                if rng.random_bool(0.8) {
                    l = l.with(t, rng.random_bool(0.5));
                }
            }
            l
        })
        .collect()
}

fn labels_near_hinge(
    a: &EmbeddingSet<f64>,
    b: &EmbeddingSet<f64>,
    labels: &[SimilarityLabel],
    margin: f64,
) -> Result<bool> {
    for (task, ta) in &a.by_task {
        let tb = &b.by_task[task];
        for (i, l) in labels.iter().enumerate() {
            if let Some(y) = l.y(*task) {
                if near_hinge(pair_distance(ta.row(i), tb.row(i))?, y, margin) {
                    return Ok(true);
                }
            }
        }
    }
    Ok(false)
}

fn grads_in_order(set: &EmbeddingSet<f64>, like: &EmbeddingSet<f64>) -> Vec<f64> {
    like.by_task
        .iter()
        .flat_map(|(task, t)| match set.get(*task) {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; t.len()],
        })
        .collect()
}

fn check_multitask(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let n = rng.random_range(1..5);
    let tasks = [Task::Activity, Task::Person];
    let mut cfg = LossConfig::default();
    let mut ea = EmbeddingSet::default();
    let mut eb = EmbeddingSet::default();
    for t in tasks {
        let dim = rng.random_range(1..4);
        ea.insert(t, uniform(rng, vec![n, dim], -0.6, 0.6));
        eb.insert(t, uniform(rng, vec![n, dim], -0.6, 0.6));
        cfg.weights.insert(
            t,
            if rng.random_bool(0.2) {
                0.0
            } else {
                rng.random_range(0.1..2.0)
            },
        );
    }
    let labels = random_labels(rng, n, &tasks);
    if labels_near_hinge(&ea, &eb, &labels, cfg.margin)? {
        return Ok(None);
    }
    let out = multitask_loss(&ea, &eb, &labels, &cfg)?;
    let mut analytic = grads_in_order(&out.grads_a, &ea);
    analytic.extend(grads_in_order(&out.grads_b, &eb));

    let mut numeric = Vec::new();
    for (side, other) in [(&ea, &eb), (&eb, &ea)] {
        let side_is_a = std::ptr::eq(side, &ea);
        for (task, t) in &side.by_task {
            numeric.extend(numeric_input(t, |p| {
                let mut s = side.clone();
                s.insert(*task, p.clone());
                let total = if side_is_a {
                    multitask_loss(&s, other, &labels, &cfg)?.total
                } else {
                    multitask_loss(other, &s, &labels, &cfg)?.total
                };
                Ok(total)
            })?);
        }
    }
    Ok(Some((analytic, numeric)))
}

fn tiny_network(rng: &mut ChaCha8Rng) -> Result<Network<f64>> {
    let mut net = Network::<f64>::build(
        NetworkConfig {
            input_channels: 2,
            block_channels: vec![3, 3],
            kernel: 3,
            dilations: vec![1, 2],
            pool_between_blocks: true,
            heads: vec![
                HeadSpec {
                    task: Task::Activity,
                    dim: 2,
                },
                HeadSpec {
                    task: Task::Person,
                    dim: 2,
                },
            ],
            ..NetworkConfig::default()
        },
        rng.random(),
    )?;
    for block in &mut net.blocks {
        for l in &mut block.layers {
            l.norm = random_bn(rng, l.norm.channels())?;
        }
    }
    Ok(net)
}

fn network_slots(n: &mut Network<f64>) -> Vec<&mut Tensor<f64>> {
    n.params_mut().into_iter().map(|p| &mut p.value).collect()
}

/// Whole siamese pair: both branches, shared parameters, multitask loss.
fn check_network(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let mut net = tiny_network(rng)?;
    let b = 2;
    let xa = uniform(rng, vec![b, 2, 8], -1.0, 1.0);
    let xb = uniform(rng, vec![b, 2, 8], -1.0, 1.0);
    let labels = random_labels(rng, b, &[Task::Activity, Task::Person]);
    let cfg = LossConfig::default();

    let (ea, eb, cache) = net.forward_pair(&xa, &xb, Mode::Train)?;
    if cache.min_kink_distance() < KINK_MARGIN || labels_near_hinge(&ea, &eb, &labels, cfg.margin)?
    {
        return Ok(None);
    }
    let reference = net.clone();
    let out = multitask_loss(&ea, &eb, &labels, &cfg)?;
    net.zero_grads();
    net.backward_pair(&cache, &out.grads_a, &out.grads_b)?;
    let analytic: Vec<f64> = net
        .params_mut()
        .into_iter()
        .flat_map(|p| p.grad.data().to_vec())
        .collect();

    let numeric = numeric_params(&reference, network_slots, &|m| {
        let (ea, eb, _) = m.forward_pair(&xa, &xb, Mode::Train)?;
        Ok(multitask_loss(&ea, &eb, &labels, &cfg)?.total)
    })?;
    Ok(Some((analytic, numeric)))
}
