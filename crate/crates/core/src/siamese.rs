//! Multi-output siamese network: one TCN encoder shared by both inputs of
//! a pair, followed by one linear head per task.
//!
//! Weight sharing is structural. A pair is evaluated by running the same
//! [`Network`] twice, and both branches accumulate into the same gradient
//! buffers during [`Network::backward_pair`].

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::Task;
use crate::tcn::{
    temporal_max_pool, temporal_max_pool_backward, BatchNorm, Conv1d, Mode, PoolCache, TcnBlock,
    TcnBlockCache, TcnLayer,
};
use crate::tensor::{matvec_like, matvec_like_backward, ParamTensor, Real, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub task: Task,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub input_channels: usize,
    /// Feature maps of each TCN block.
    pub block_channels: Vec<usize>,
    /// Odd kernel width shared by every dilated conv.
    pub kernel: usize,
    /// Dilation of each conv layer inside a block; its length is the layer count.
    pub dilations: Vec<usize>,
    /// Width-2 max pooling between consecutive blocks.
    pub pool_between_blocks: bool,
    pub heads: Vec<HeadSpec>,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for NetworkConfig {
    /// TCN(128)-P-TCN(128)-P-TCN(128) with 256-wide activity and person heads.
    fn default() -> Self {
        Self {
            input_channels: 3,
            block_channels: vec![128; 3],
            kernel: 5,
            dilations: vec![1, 2],
            pool_between_blocks: true,
            heads: vec![
                HeadSpec {
                    task: Task::Activity,
                    dim: 256,
                },
                HeadSpec {
                    task: Task::Person,
                    dim: 256,
                },
            ],
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.input_channels == 0 {
            return fail("input_channels must be positive".into());
        }
        if self.block_channels.is_empty() || self.block_channels.contains(&0) {
            return fail("need at least one block, each with positive width".into());
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return fail(format!("kernel width {} must be odd", self.kernel));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return fail("need at least one conv layer per block, dilations >= 1".into());
        }
        if self.heads.is_empty() {
            return fail("need at least one head".into());
        }
        let mut seen = Vec::new();
        for h in &self.heads {
            if h.dim == 0 {
                return fail(format!("head '{}' has zero embedding dim", h.task));
            }
            if seen.contains(&h.task) {
                return fail(format!("duplicate head '{}'", h.task));
            }
            seen.push(h.task);
        }
        Ok(())
    }

    /// Shortest input that survives every pooling stage.
    pub fn min_time_len(&self) -> usize {
        if self.pool_between_blocks {
            1 << (self.block_channels.len() - 1)
        } else {
            1
        }
    }

    /// Receptive field in input samples of one block.
    pub fn block_receptive_field(&self) -> usize {
        1 + (self.kernel - 1) * self.dilations.iter().sum::<usize>()
    }

    pub fn general_dim(&self) -> usize {
        *self.block_channels.last().unwrap()
    }

    pub fn tasks(&self) -> Vec<Task> {
        self.heads.iter().map(|h| h.task).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head<T = f32> {
    pub task: Task,
    pub weight: ParamTensor<T>,
    pub bias: ParamTensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    pub config: NetworkConfig,
    pub blocks: Vec<TcnBlock<T>>,
    pub heads: Vec<Head<T>>,
}

/// Per-task embeddings `[B, dim]` of one branch.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct EmbeddingSet<T = f32> {
    pub by_task: BTreeMap<Task, Tensor<T>>,
}

impl<T: Real> EmbeddingSet<T> {
    pub fn get(&self, task: Task) -> Option<&Tensor<T>> {
        self.by_task.get(&task)
    }

    pub fn insert(&mut self, task: Task, t: Tensor<T>) {
        self.by_task.insert(task, t);
    }
}

pub struct EncodeCache<T> {
    blocks: Vec<TcnBlockCache<T>>,
    pools: Vec<(Tensor<T>, PoolCache)>,
    final_shape: Vec<usize>,
}

impl<T: Real> EncodeCache<T> {
    /// Distance of the forward pass from the nearest non-differentiable
    /// point (ReLU at zero, max-pool tie).
    pub fn min_kink_distance(&self) -> f64 {
        let relu = self
            .blocks
            .iter()
            .map(TcnBlockCache::min_relu_margin)
            .fold(f64::INFINITY, f64::min);
        let pool = self
            .pools
            .iter()
            .map(|(x, c)| c.min_gap(x))
            .fold(f64::INFINITY, f64::min);
        relu.min(pool)
    }
}

pub struct BranchCache<T> {
    pub encode: EncodeCache<T>,
    pub general: Tensor<T>,
}

pub struct PairCache<T> {
    pub a: BranchCache<T>,
    pub b: BranchCache<T>,
}

impl<T: Real> PairCache<T> {
    pub fn min_kink_distance(&self) -> f64 {
        self.a
            .encode
            .min_kink_distance()
            .min(self.b.encode.min_kink_distance())
    }
}

impl<T: Real> Network<T> {
    /// Deterministic initialization: convolution and head weights uniform in
    /// `±1/sqrt(fan_in)`, batch norm at unit scale and zero shift.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::with_capacity(config.block_channels.len());
        let mut in_ch = config.input_channels;
        for &out_ch in &config.block_channels {
            let mut layers = Vec::with_capacity(config.dilations.len());
            let mut layer_in = in_ch;
            for &d in &config.dilations {
                layers.push(TcnLayer {
                    conv: Conv1d::init(&mut rng, layer_in, out_ch, config.kernel, d)?,
                    norm: BatchNorm::new(out_ch, config.bn_momentum, config.bn_eps)?,
                });
                layer_in = out_ch;
            }
            let residual = if in_ch != out_ch {
                Some(Conv1d::init(&mut rng, in_ch, out_ch, 1, 1)?)
            } else {
                None
            };
            blocks.push(TcnBlock::new(layers, residual)?);
            in_ch = out_ch;
        }
        let bound = 1.0 / (in_ch as f64).sqrt();
        let mut heads = Vec::with_capacity(config.heads.len());
        for spec in &config.heads {
            use rand::Rng;
            let w = (0..spec.dim * in_ch)
                .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
                .collect();
            let b = (0..spec.dim)
                .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
                .collect();
            heads.push(Head {
                task: spec.task,
                weight: ParamTensor::new(Tensor::new(vec![spec.dim, in_ch], w)?),
                bias: ParamTensor::new(Tensor::new(vec![spec.dim], b)?),
            });
        }
        Ok(Self {
            config,
            blocks,
            heads,
        })
    }

    pub fn head(&self, task: Task) -> Option<&Head<T>> {
        self.heads.iter().find(|h| h.task == task)
    }

    pub fn tasks(&self) -> Vec<Task> {
        self.heads.iter().map(|h| h.task).collect()
    }

    /// Shared-encoder representation `[B, C]`: all blocks (with pooling in
    /// between) followed by a global temporal average.
    pub fn encode(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, EncodeCache<T>)> {
        let (_, ch, len) = x.dims3()?;
        if ch != self.config.input_channels {
            return Err(Error::shape(
                "encode",
                format!(
                    "input has {ch} channels, network expects {}",
                    self.config.input_channels
                ),
            ));
        }
        if len < self.config.min_time_len() {
            return Err(Error::shape(
                "encode",
                format!(
                    "sequence of length {len} is shorter than the minimum {}",
                    self.config.min_time_len()
                ),
            ));
        }
        let mut h = x.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut pools = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            if i > 0 && self.config.pool_between_blocks {
                let (pooled, pc) = temporal_max_pool(&h)?;
                pools.push((std::mem::replace(&mut h, pooled), pc));
            }
            let (out, bc) = block.forward(&h, mode)?;
            blocks.push(bc);
            h = out;
        }
        let (batch, ch, len) = h.dims3()?;
        let inv = T::one() / T::from_usize(len).unwrap();
        let mut general = Vec::with_capacity(batch * ch);
        for row in 0..batch * ch {
            let s: T = h.data()[row * len..(row + 1) * len].iter().copied().sum();
            general.push(s * inv);
        }
        let general = Tensor::new(vec![batch, ch], general)?.ensure_finite("encode")?;
        Ok((
            general,
            EncodeCache {
                blocks,
                pools,
                final_shape: h.shape().to_vec(),
            },
        ))
    }

    pub fn heads_forward(&self, general: &Tensor<T>) -> Result<EmbeddingSet<T>> {
        let mut set = EmbeddingSet::default();
        for head in &self.heads {
            set.insert(head.task, matvec_like(&head.weight, general, &head.bias)?);
        }
        Ok(set)
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<(EmbeddingSet<T>, BranchCache<T>)> {
        let (general, encode) = self.encode(x, mode)?;
        let emb = self.heads_forward(&general)?;
        Ok((emb, BranchCache { encode, general }))
    }

    /// Both inputs pass through the same parameters. Time lengths may differ.
    pub fn forward_pair(
        &self,
        x_a: &Tensor<T>,
        x_b: &Tensor<T>,
        mode: Mode,
    ) -> Result<(EmbeddingSet<T>, EmbeddingSet<T>, PairCache<T>)> {
        let (_, ca, _) = x_a.dims3()?;
        let (_, cb, _) = x_b.dims3()?;
        if ca != cb {
            return Err(Error::shape(
                "forward_pair",
                format!("pair inputs have {ca} and {cb} channels"),
            ));
        }
        let (emb_a, a) = self.forward(x_a, mode)?;
        let (emb_b, b) = self.forward(x_b, mode)?;
        Ok((emb_a, emb_b, PairCache { a, b }))
    }

    /// Backpropagates per-task embedding gradients of one branch, adding
    /// into the parameter gradient buffers. Tasks missing from `grads`
    /// contribute nothing.
    pub fn backward(&mut self, cache: &BranchCache<T>, grads: &EmbeddingSet<T>) -> Result<()> {
        let mut g_general = Tensor::zeros(cache.general.shape().to_vec());
        let mut any = false;
        for head in &mut self.heads {
            let Some(g) = grads.get(head.task) else {
                continue;
            };
            let lg = matvec_like_backward(&head.weight, &cache.general, g)?;
            head.weight.accumulate(&lg.weights);
            head.bias.accumulate(&lg.bias);
            for (a, &b) in g_general.data_mut().iter_mut().zip(lg.input.data()) {
                *a += b;
            }
            any = true;
        }
        if !any {
            return Ok(());
        }
        self.encoder_backward(&cache.encode, &g_general)
    }

    pub fn backward_pair(
        &mut self,
        cache: &PairCache<T>,
        grads_a: &EmbeddingSet<T>,
        grads_b: &EmbeddingSet<T>,
    ) -> Result<()> {
        self.backward(&cache.a, grads_a)?;
        self.backward(&cache.b, grads_b)
    }

    fn encoder_backward(&mut self, cache: &EncodeCache<T>, g_general: &Tensor<T>) -> Result<()> {
        let (batch, ch, len) = match cache.final_shape[..] {
            [b, c, t] => (b, c, t),
            _ => unreachable!(),
        };
        let inv = T::one() / T::from_usize(len).unwrap();
        let mut g = Vec::with_capacity(batch * ch * len);
        for &gv in g_general.data() {
            g.extend(std::iter::repeat_n(gv * inv, len));
        }
        let mut g = Tensor::new(cache.final_shape.clone(), g)?;
        let mut pools = cache.pools.iter().rev();
        for (i, (block, bc)) in self.blocks.iter_mut().zip(&cache.blocks).enumerate().rev() {
            g = block.backward(bc, &g)?;
            if i > 0 && self.config.pool_between_blocks {
                let (_, pc) = pools.next().expect("pool cache per block boundary");
                g = temporal_max_pool_backward(pc, &g);
            }
        }
        Ok(())
    }

    /// Commits the batch-norm statistics of a train-mode branch.
    pub fn update_running(&mut self, cache: &BranchCache<T>) {
        for (block, bc) in self.blocks.iter_mut().zip(&cache.encode.blocks) {
            block.update_running(bc);
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        let mut out = Vec::new();
        for block in &mut self.blocks {
            for layer in &mut block.layers {
                out.push(&mut layer.conv.weight);
                out.push(&mut layer.conv.bias);
                out.push(&mut layer.norm.gamma);
                out.push(&mut layer.norm.beta);
            }
            if let Some(p) = &mut block.residual {
                out.push(&mut p.weight);
                out.push(&mut p.bias);
            }
        }
        for head in &mut self.heads {
            out.push(&mut head.weight);
            out.push(&mut head.bias);
        }
        out
    }

    pub fn zero_grads(&mut self) {
        crate::tensor::zero_grads(self.params_mut());
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors()
            .into_iter()
            .filter(|(_, _, trainable)| *trainable)
            .map(|(_, t, _)| t.len())
            .sum()
    }

    /// Every stored tensor in a fixed order: `(name, tensor, trainable)`.
    /// Running statistics are listed as non-trainable.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>, bool)> {
        let mut out = Vec::new();
        for (bi, block) in self.blocks.iter().enumerate() {
            for (li, layer) in block.layers.iter().enumerate() {
                let p = format!("block{bi}.layer{li}");
                out.push((format!("{p}.conv.weight"), &layer.conv.weight.value, true));
                out.push((format!("{p}.conv.bias"), &layer.conv.bias.value, true));
                out.push((format!("{p}.bn.gamma"), &layer.norm.gamma.value, true));
                out.push((format!("{p}.bn.beta"), &layer.norm.beta.value, true));
                out.push((
                    format!("{p}.bn.running_mean"),
                    &layer.norm.running_mean,
                    false,
                ));
                out.push((
                    format!("{p}.bn.running_var"),
                    &layer.norm.running_var,
                    false,
                ));
            }
            if let Some(r) = &block.residual {
                out.push((format!("block{bi}.residual.weight"), &r.weight.value, true));
                out.push((format!("block{bi}.residual.bias"), &r.bias.value, true));
            }
        }
        for head in &self.heads {
            out.push((
                format!("head.{}.weight", head.task),
                &head.weight.value,
                true,
            ));
            out.push((format!("head.{}.bias", head.task), &head.bias.value, true));
        }
        out
    }

    /// Mutable counterpart of [`Network::named_tensors`], same order.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (bi, block) in self.blocks.iter_mut().enumerate() {
            for (li, layer) in block.layers.iter_mut().enumerate() {
                let p = format!("block{bi}.layer{li}");
                out.push((format!("{p}.conv.weight"), &mut layer.conv.weight.value));
                out.push((format!("{p}.conv.bias"), &mut layer.conv.bias.value));
                out.push((format!("{p}.bn.gamma"), &mut layer.norm.gamma.value));
                out.push((format!("{p}.bn.beta"), &mut layer.norm.beta.value));
                out.push((format!("{p}.bn.running_mean"), &mut layer.norm.running_mean));
                out.push((format!("{p}.bn.running_var"), &mut layer.norm.running_var));
            }
            if let Some(r) = &mut block.residual {
                out.push((format!("block{bi}.residual.weight"), &mut r.weight.value));
                out.push((format!("block{bi}.residual.bias"), &mut r.bias.value));
            }
        }
        for head in &mut self.heads {
            out.push((format!("head.{}.weight", head.task), &mut head.weight.value));
            out.push((format!("head.{}.bias", head.task), &mut head.bias.value));
        }
        out
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            blocks: self.blocks.iter().map(TcnBlock::cast).collect(),
            heads: self
                .heads
                .iter()
                .map(|h| Head {
                    task: h.task,
                    weight: h.weight.cast(),
                    bias: h.bias.cast(),
                })
                .collect(),
        }
    }

    /// Order-sensitive checksum over all stored values.
    pub fn checksum(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        for (name, t, _) in self.named_tensors() {
            hasher.update(name.as_bytes());
            for v in t.data() {
                hasher.update(&v.to_f64_lossy().to_le_bytes());
            }
        }
        hasher.finalize()
    }
}
