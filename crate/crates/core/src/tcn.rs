//! TCN building blocks: centered dilated convolution, batch normalization,
//! ReLU, residual combination and width-2 temporal max pooling.
//!
//! Each layer exposes a forward pass that returns its output together with
//! whatever the backward pass needs, and a backward pass that maps the
//! upstream gradient to input and parameter gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamTensor, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Weights `[out, in, kernel]` of a centered, zero-padded dilated
/// convolution. Tap `j` of the kernel applies to `x[t + dilation * (half - j)]`
/// where `half = (kernel - 1) / 2`, so output length equals input length.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d<T = f32> {
    pub weight: ParamTensor<T>,
    pub bias: ParamTensor<T>,
    pub dilation: usize,
}

pub struct Conv1dGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Conv1d<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, dilation: usize) -> Result<Self> {
        let [out_ch, _, kernel] = weight.shape()[..] else {
            return Err(Error::shape(
                "Conv1d::new",
                format!(
                    "weights must be [out, in, kernel], got {:?}",
                    weight.shape()
                ),
            ));
        };
        if kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel width {kernel} must be odd")));
        }
        if dilation == 0 {
            return Err(Error::Config("dilation must be at least 1".into()));
        }
        if bias.shape() != [out_ch] {
            return Err(Error::shape(
                "Conv1d::new",
                format!("bias {:?} for {out_ch} output channels", bias.shape()),
            ));
        }
        Ok(Self {
            weight: ParamTensor::new(weight),
            bias: ParamTensor::new(bias),
            dilation,
        })
    }

    /// Uniform `±1/sqrt(in * kernel)` initialization.
    pub fn init(
        rng: &mut impl Rng,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
    ) -> Result<Self> {
        let bound = 1.0 / ((in_ch * kernel) as f64).sqrt();
        let w = (0..out_ch * in_ch * kernel)
            .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
            .collect();
        let b = (0..out_ch)
            .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
            .collect();
        Self::new(
            Tensor::new(vec![out_ch, in_ch, kernel], w)?,
            Tensor::new(vec![out_ch], b)?,
            dilation,
        )
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    /// Signed input offset of each kernel tap.
    fn tap_offsets(&self) -> impl Iterator<Item = (usize, isize)> {
        let half = (self.kernel() / 2) as isize;
        let d = self.dilation as isize;
        (0..self.kernel()).map(move |j| (j, d * (half - j as isize)))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, in_ch, len) = x.dims3()?;
        if in_ch != self.in_channels() {
            return Err(Error::shape(
                "dilated_conv_forward",
                format!(
                    "input has {in_ch} channels, layer expects {}",
                    self.in_channels()
                ),
            ));
        }
        if len == 0 {
            return Err(Error::shape("dilated_conv_forward", "empty time axis"));
        }
        let out_ch = self.out_channels();
        let k = self.kernel();
        let w = self.weight.value.data();
        let bias = self.bias.value.data();
        let xd = x.data();
        let mut y = vec![T::zero(); batch * out_ch * len];
        for b in 0..batch {
            for o in 0..out_ch {
                let out = &mut y[(b * out_ch + o) * len..][..len];
                out.fill(bias[o]);
                for c in 0..in_ch {
                    let xs = &xd[(b * in_ch + c) * len..][..len];
                    for (j, s) in self.tap_offsets() {
                        let Some((t0, t1)) = valid_range(len, s) else {
                            continue;
                        };
                        let wv = w[(o * in_ch + c) * k + j];
                        let src = &xs[(t0 as isize + s) as usize..(t1 as isize + s) as usize];
                        for (yo, &xv) in out[t0..t1].iter_mut().zip(src) {
                            *yo += wv * xv;
                        }
                    }
                }
            }
        }
        Tensor::new(vec![batch, out_ch, len], y)
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Conv1dGrads<T>> {
        let (batch, in_ch, len) = x.dims3()?;
        let out_ch = self.out_channels();
        if grad_out.shape() != [batch, out_ch, len] {
            return Err(Error::shape(
                "dilated_conv_backward",
                format!("grad {:?} for input {:?}", grad_out.shape(), x.shape()),
            ));
        }
        let k = self.kernel();
        let w = self.weight.value.data();
        let xd = x.data();
        let gd = grad_out.data();
        let mut gx = vec![T::zero(); x.len()];
        let mut gw = vec![T::zero(); w.len()];
        let mut gb = vec![T::zero(); out_ch];
        for b in 0..batch {
            for o in 0..out_ch {
                let g = &gd[(b * out_ch + o) * len..][..len];
                gb[o] += g.iter().copied().sum();
                for c in 0..in_ch {
                    let xs = &xd[(b * in_ch + c) * len..][..len];
                    let gxs = &mut gx[(b * in_ch + c) * len..][..len];
                    for (j, s) in self.tap_offsets() {
                        let Some((t0, t1)) = valid_range(len, s) else {
                            continue;
                        };
                        let lo = (t0 as isize + s) as usize;
                        let hi = (t1 as isize + s) as usize;
                        let widx = (o * in_ch + c) * k + j;
                        let wv = w[widx];
                        let mut acc = T::zero();
                        for ((&gv, &xv), gxv) in
                            g[t0..t1].iter().zip(&xs[lo..hi]).zip(&mut gxs[lo..hi])
                        {
                            acc += gv * xv;
                            *gxv += wv * gv;
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
        Ok(Conv1dGrads {
            input: Tensor::new(x.shape().to_vec(), gx)?,
            weight: Tensor::new(self.weight.value.shape().to_vec(), gw)?,
            bias: Tensor::new(vec![out_ch], gb)?,
        })
    }

    pub fn accumulate(&mut self, grads: &Conv1dGrads<T>) {
        self.weight.accumulate(&grads.weight);
        self.bias.accumulate(&grads.bias);
    }

    pub fn cast<U: Real>(&self) -> Conv1d<U> {
        Conv1d {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            dilation: self.dilation,
        }
    }
}

/// Output positions `[t0, t1)` whose source index `t + shift` lies in `[0, len)`.
fn valid_range(len: usize, shift: isize) -> Option<(usize, usize)> {
    let t0 = (-shift).max(0) as usize;
    let t1 = (len as isize - shift).min(len as isize);
    (t1 > t0 as isize).then_some((t0, t1 as usize))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T = f32> {
    pub gamma: ParamTensor<T>,
    pub beta: ParamTensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    /// Weight kept on the old running statistic at each update.
    pub momentum: f64,
    pub eps: f64,
}

pub struct BatchNormCache<T> {
    mode: Mode,
    normalized: Tensor<T>,
    inv_std: Vec<T>,
    batch_mean: Vec<T>,
    batch_var: Vec<T>,
}

pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize, momentum: f64, eps: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum < 1.0) || eps <= 0.0 {
            return Err(Error::Config(format!(
                "batch norm momentum {momentum} must be in (0,1) and eps {eps} positive"
            )));
        }
        Ok(Self {
            gamma: ParamTensor::new(Tensor::full(vec![channels], T::one())),
            beta: ParamTensor::new(Tensor::zeros(vec![channels])),
            running_mean: Tensor::zeros(vec![channels]),
            running_var: Tensor::full(vec![channels], T::one()),
            momentum,
            eps,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        let (batch, ch, len) = x.dims3()?;
        if ch != self.channels() {
            return Err(Error::shape(
                "batchnorm",
                format!("input has {ch} channels, layer expects {}", self.channels()),
            ));
        }
        let count = batch * len;
        if count == 0 {
            return Err(Error::shape("batchnorm", "empty input"));
        }
        let n = T::from_usize(count).unwrap();
        let eps = T::from_f64_lossy(self.eps);
        let xd = x.data();
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![T::zero(); ch];
                let mut var = vec![T::zero(); ch];
                for c in 0..ch {
                    let mut s = T::zero();
                    for b in 0..batch {
                        s += xd[(b * ch + c) * len..][..len].iter().copied().sum();
                    }
                    let m = s / n;
                    let mut v = T::zero();
                    for b in 0..batch {
                        for &xv in &xd[(b * ch + c) * len..][..len] {
                            v += (xv - m) * (xv - m);
                        }
                    }
                    mean[c] = m;
                    var[c] = v / n;
                }
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.data().to_vec(),
                self.running_var.data().to_vec(),
            ),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut y = vec![T::zero(); x.len()];
        for b in 0..batch {
            for c in 0..ch {
                let off = (b * ch + c) * len;
                for t in off..off + len {
                    let h = (xd[t] - mean[c]) * inv_std[c];
                    xhat[t] = h;
                    y[t] = gamma[c] * h + beta[c];
                }
            }
        }
        let cache = BatchNormCache {
            mode,
            normalized: Tensor::new(x.shape().to_vec(), xhat)?,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        };
        Ok((Tensor::new(x.shape().to_vec(), y)?, cache))
    }

    pub fn backward(
        &self,
        cache: &BatchNormCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<BatchNormGrads<T>> {
        let (batch, ch, len) = grad_out.dims3()?;
        if grad_out.shape() != cache.normalized.shape() {
            return Err(Error::shape(
                "batchnorm_backward",
                format!(
                    "grad {:?} vs cached {:?}",
                    grad_out.shape(),
                    cache.normalized.shape()
                ),
            ));
        }
        let n = T::from_usize(batch * len).unwrap();
        let gamma = self.gamma.value.data();
        let xhat = cache.normalized.data();
        let g = grad_out.data();
        let mut dgamma = vec![T::zero(); ch];
        let mut dbeta = vec![T::zero(); ch];
        for b in 0..batch {
            for c in 0..ch {
                let off = (b * ch + c) * len;
                for t in off..off + len {
                    dgamma[c] += g[t] * xhat[t];
                    dbeta[c] += g[t];
                }
            }
        }
        let mut dx = vec![T::zero(); g.len()];
        for b in 0..batch {
            for c in 0..ch {
                let off = (b * ch + c) * len;
                let scale = gamma[c] * cache.inv_std[c];
                match cache.mode {
                    Mode::Eval => {
                        for t in off..off + len {
                            dx[t] = g[t] * scale;
                        }
                    }
                    Mode::Train => {
                        // dx = γ/σ · (g − mean(g) − x̂·mean(g·x̂))
                        let mean_g = dbeta[c] / n;
                        let mean_gx = dgamma[c] / n;
                        for t in off..off + len {
                            dx[t] = scale * (g[t] - mean_g - xhat[t] * mean_gx);
                        }
                    }
                }
            }
        }
        Ok(BatchNormGrads {
            input: Tensor::new(grad_out.shape().to_vec(), dx)?,
            gamma: Tensor::new(vec![ch], dgamma)?,
            beta: Tensor::new(vec![ch], dbeta)?,
        })
    }

    /// Folds the batch statistics of a train-mode forward into the running
    /// estimates. No-op for eval-mode caches.
    pub fn update_running(&mut self, cache: &BatchNormCache<T>) {
        if cache.mode != Mode::Train {
            return;
        }
        let keep = T::from_f64_lossy(self.momentum);
        let take = T::one() - keep;
        for (r, &m) in self
            .running_mean
            .data_mut()
            .iter_mut()
            .zip(&cache.batch_mean)
        {
            *r = keep * *r + take * m;
        }
        for (r, &v) in self.running_var.data_mut().iter_mut().zip(&cache.batch_var) {
            *r = keep * *r + take * v;
        }
    }

    pub fn accumulate(&mut self, grads: &BatchNormGrads<T>) {
        self.gamma.accumulate(&grads.gamma);
        self.beta.accumulate(&grads.beta);
    }

    pub fn cast<U: Real>(&self) -> BatchNorm<U> {
        BatchNorm {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
            momentum: self.momentum,
            eps: self.eps,
        }
    }
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Gradient of [`relu`] given its forward input. The derivative at 0 is taken as 0.
pub fn relu_backward<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&xv, &g)| if xv > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// `h_last + block_input`, routing `block_input` through the 1×1
/// projection when one is given.
pub fn residual_combine<T: Real>(
    h_last: &Tensor<T>,
    block_input: &Tensor<T>,
    proj: Option<&Conv1d<T>>,
) -> Result<Tensor<T>> {
    let (_, _, t_h) = h_last.dims3()?;
    let (_, _, t_x) = block_input.dims3()?;
    if t_h != t_x {
        return Err(Error::shape(
            "residual_combine",
            format!("time lengths {t_h} and {t_x} differ"),
        ));
    }
    let projected;
    let skip = match proj {
        Some(p) => {
            projected = p.forward(block_input)?;
            &projected
        }
        None => block_input,
    };
    if skip.shape() != h_last.shape() {
        return Err(Error::shape(
            "residual_combine",
            format!("{:?} vs {:?}", skip.shape(), h_last.shape()),
        ));
    }
    let data = h_last
        .data()
        .iter()
        .zip(skip.data())
        .map(|(&a, &b)| a + b)
        .collect();
    Tensor::new(h_last.shape().to_vec(), data)
}

pub struct PoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl PoolCache {
    /// Smallest gap between the two candidates of any pooling window.
    pub fn min_gap<T: Real>(&self, input: &Tensor<T>) -> f64 {
        let (b, c, t) = (
            self.input_shape[0],
            self.input_shape[1],
            self.input_shape[2],
        );
        let out_t = t / 2;
        let d = input.data();
        let mut gap = f64::INFINITY;
        for row in 0..b * c {
            for p in 0..out_t {
                let i = row * t + 2 * p;
                gap = gap.min((d[i] - d[i + 1]).abs().to_f64_lossy());
            }
        }
        gap
    }
}

/// Max over non-overlapping pairs `(o[2t], o[2t+1])`; an odd trailing sample is dropped.
pub fn temporal_max_pool<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolCache)> {
    let (batch, ch, len) = x.dims3()?;
    if len < 2 {
        return Err(Error::shape(
            "temporal_max_pool",
            format!("need at least 2 time steps, got {len}"),
        ));
    }
    let out_len = len / 2;
    let xd = x.data();
    let mut out = Vec::with_capacity(batch * ch * out_len);
    let mut argmax = Vec::with_capacity(batch * ch * out_len);
    for row in 0..batch * ch {
        for p in 0..out_len {
            let i = row * len + 2 * p;
            let pick = if xd[i + 1] > xd[i] { i + 1 } else { i };
            out.push(xd[pick]);
            argmax.push(pick);
        }
    }
    Ok((
        Tensor::new(vec![batch, ch, out_len], out)?,
        PoolCache {
            input_shape: x.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn temporal_max_pool_backward<T: Real>(cache: &PoolCache, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut gx = Tensor::zeros(cache.input_shape.clone());
    let gd = gx.data_mut();
    for (&src, &g) in cache.argmax.iter().zip(grad_out.data()) {
        gd[src] += g;
    }
    gx
}

#[derive(Clone, Debug, PartialEq)]
pub struct TcnLayer<T = f32> {
    pub conv: Conv1d<T>,
    pub norm: BatchNorm<T>,
}

/// `L` × (dilated conv → batch norm → ReLU) plus a residual connection.
#[derive(Clone, Debug, PartialEq)]
pub struct TcnBlock<T = f32> {
    pub layers: Vec<TcnLayer<T>>,
    /// 1×1 convolution on the skip path, present iff channel counts differ.
    pub residual: Option<Conv1d<T>>,
}

struct LayerCache<T> {
    conv_input: Tensor<T>,
    norm: BatchNormCache<T>,
    pre_activation: Tensor<T>,
}

pub struct TcnBlockCache<T> {
    input: Tensor<T>,
    layers: Vec<LayerCache<T>>,
}

impl<T: Real> TcnBlockCache<T> {
    /// Smallest |pre-activation| seen by any ReLU in the block.
    pub fn min_relu_margin(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.pre_activation.data().iter())
            .map(|v| v.abs().to_f64_lossy())
            .fold(f64::INFINITY, f64::min)
    }
}

impl<T: Real> TcnBlock<T> {
    pub fn new(layers: Vec<TcnLayer<T>>, residual: Option<Conv1d<T>>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Config("a TCN block needs at least one layer".into()))?;
        let in_ch = first.conv.in_channels();
        let out_ch = layers.last().unwrap().conv.out_channels();
        for pair in layers.windows(2) {
            if pair[0].conv.out_channels() != pair[1].conv.in_channels() {
                return Err(Error::Config(
                    "consecutive conv layers disagree on channels".into(),
                ));
            }
        }
        for l in &layers {
            if l.norm.channels() != l.conv.out_channels() {
                return Err(Error::Config(
                    "batch norm width differs from conv output".into(),
                ));
            }
        }
        match &residual {
            Some(p) if in_ch == out_ch => {
                let _ = p;
                return Err(Error::Config(
                    "residual projection given but channel counts match".into(),
                ));
            }
            Some(p)
                if p.kernel() != 1 || p.in_channels() != in_ch || p.out_channels() != out_ch =>
            {
                return Err(Error::Config(
                    "residual projection must be 1x1 in->out".into(),
                ));
            }
            None if in_ch != out_ch => {
                return Err(Error::Config(
                    "channel counts differ but no residual projection given".into(),
                ));
            }
            _ => {}
        }
        Ok(Self { layers, residual })
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].conv.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().unwrap().conv.out_channels()
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, TcnBlockCache<T>)> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let conv_out = layer.conv.forward(&h)?;
            let (normed, norm_cache) = layer.norm.forward(&conv_out, mode)?;
            let activated = relu(&normed);
            caches.push(LayerCache {
                conv_input: std::mem::replace(&mut h, activated),
                norm: norm_cache,
                pre_activation: normed,
            });
        }
        let out = residual_combine(&h, x, self.residual.as_ref())?;
        Ok((
            out,
            TcnBlockCache {
                input: x.clone(),
                layers: caches,
            },
        ))
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. the block input.
    pub fn backward(
        &mut self,
        cache: &TcnBlockCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let mut grad_input = match &mut self.residual {
            Some(proj) => {
                let g = proj.backward(&cache.input, grad_out)?;
                proj.accumulate(&g);
                g.input
            }
            None => grad_out.clone(),
        };
        let mut g = grad_out.clone();
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers).rev() {
            let g_norm = relu_backward(&lc.pre_activation, &g);
            let bn = layer.norm.backward(&lc.norm, &g_norm)?;
            layer.norm.accumulate(&bn);
            let conv = layer.conv.backward(&lc.conv_input, &bn.input)?;
            layer.conv.accumulate(&conv);
            g = conv.input;
        }
        for (a, &b) in grad_input.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
        Ok(grad_input)
    }

    pub fn update_running(&mut self, cache: &TcnBlockCache<T>) {
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers) {
            layer.norm.update_running(&lc.norm);
        }
    }

    pub fn cast<U: Real>(&self) -> TcnBlock<U> {
        TcnBlock {
            layers: self
                .layers
                .iter()
                .map(|l| TcnLayer {
                    conv: l.conv.cast(),
                    norm: l.norm.cast(),
                })
                .collect(),
            residual: self.residual.as_ref().map(Conv1d::cast),
        }
    }
}
