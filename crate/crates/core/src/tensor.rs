//! Dense tensors with paired gradient storage.
//!
//! Layout is row-major over the shape. Sequence activations use
//! `[batch, channels, time]` with time contiguous, so one channel of one
//! sample is a single slice. Embeddings and FC activations use
//! `[batch, features]`.
//!
//! There is no autograd graph: every differentiable operation here comes
//! with an explicit backward function, and the layers in [`crate::tcn`]
//! and [`crate::siamese`] follow the same forward/backward-with-cache
//! pattern. [`finite_diff_grad`] is the oracle every backward is checked
//! against.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

use crate::error::{Error, Result};

/// Floating-point element type. Training runs in `f32`; the gradient
/// checks run the same code in `f64`.
pub trait Real:
    Float + FromPrimitive + NumAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("float conversion")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("float conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!(
                    "shape {:?} needs {} values, got {}",
                    shape,
                    expected,
                    data.len()
                ),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_f64_slice(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape, shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Interprets the tensor as `[batch, channels, time]`.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [b, c, t] => Ok((b, c, t)),
            _ => Err(Error::shape(
                "dims3",
                format!("expected [batch, channels, time], got {:?}", self.shape),
            )),
        }
    }

    /// Interprets the tensor as `[rows, cols]`.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(
                "dims2",
                format!("expected [rows, cols], got {:?}", self.shape),
            )),
        }
    }

    /// Row `i` of a tensor whose leading axis is the batch.
    pub fn row(&self, i: usize) -> &[T] {
        let stride = self.data.len() / self.shape[0];
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let stride = self.data.len() / self.shape[0];
        &mut self.data[i * stride..(i + 1) * stride]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(self, context: &str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    /// Stacks equally-shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("stack", "no tensors to stack"))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::shape(
                    "stack",
                    format!("{:?} vs {:?}", t.shape, first.shape),
                ));
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Self { shape, data })
    }

    /// Selects rows of the leading axis.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let stride = self.data.len() / self.shape[0].max(1);
        let mut data = Vec::with_capacity(stride * rows.len());
        for &r in rows {
            data.extend_from_slice(&self.data[r * stride..(r + 1) * stride]);
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Self { shape, data }
    }
}

/// Trainable tensor with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor<T = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> ParamTensor<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(T::zero());
    }

    /// Adds `delta` into the gradient buffer.
    pub fn accumulate(&mut self, delta: &Tensor<T>) {
        debug_assert_eq!(delta.shape(), self.grad.shape());
        for (g, &d) in self.grad.data_mut().iter_mut().zip(delta.data()) {
            *g += d;
        }
    }

    pub fn cast<U: Real>(&self) -> ParamTensor<U> {
        ParamTensor {
            value: self.value.cast(),
            grad: self.grad.cast(),
        }
    }
}

pub fn zero_grads<'a, T: Real>(params: impl IntoIterator<Item = &'a mut ParamTensor<T>>) {
    for p in params {
        p.zero_grad();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Max,
}

impl ElementwiseOp {
    fn apply<T: Real>(self, a: T, b: T) -> T {
        match self {
            ElementwiseOp::Add => a + b,
            ElementwiseOp::Sub => a - b,
            ElementwiseOp::Mul => a * b,
            ElementwiseOp::Max => a.max(b),
        }
    }
}

/// Pointwise binary op. Shapes must match, or `b` must be a per-channel
/// vector `[C]` broadcast over `a` of shape `[B, C, ...]`.
pub fn elementwise<T: Real>(op: ElementwiseOp, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape == b.shape {
        let data = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| op.apply(x, y))
            .collect();
        return Tensor::new(a.shape.clone(), data)?.ensure_finite("elementwise");
    }
    let channel_broadcast = b.shape.len() == 1 && a.shape.len() >= 2 && a.shape[1] == b.shape[0];
    if !channel_broadcast {
        return Err(Error::shape(
            "elementwise",
            format!("{:?} is not broadcastable to {:?}", b.shape, a.shape),
        ));
    }
    let channels = a.shape[1];
    let inner: usize = a.shape[2..].iter().product();
    let data = a
        .data
        .iter()
        .enumerate()
        .map(|(i, &x)| op.apply(x, b.data[(i / inner) % channels]))
        .collect();
    Tensor::new(a.shape.clone(), data)?.ensure_finite("elementwise")
}

/// Affine map `y = x Wᵀ + bias` applied to every row of `x: [B, in]` with
/// `weights: [out, in]`, `bias: [out]`.
pub fn matvec_like<T: Real>(
    weights: &ParamTensor<T>,
    x: &Tensor<T>,
    bias: &ParamTensor<T>,
) -> Result<Tensor<T>> {
    let (out_dim, in_dim) = weights.value.dims2()?;
    let x2 = if x.shape.len() == 1 {
        x.clone().reshape(vec![1, x.len()])?
    } else {
        x.clone()
    };
    let (batch, x_in) = x2.dims2()?;
    if x_in != in_dim || bias.value.shape() != [out_dim] {
        return Err(Error::shape(
            "matvec_like",
            format!(
                "weights {:?}, input {:?}, bias {:?}",
                weights.value.shape(),
                x.shape(),
                bias.value.shape()
            ),
        ));
    }
    let w = weights.value.data();
    let b = bias.value.data();
    let mut out = vec![T::zero(); batch * out_dim];
    for r in 0..batch {
        let xr = x2.row(r);
        for o in 0..out_dim {
            let wr = &w[o * in_dim..(o + 1) * in_dim];
            let dot: T = wr.iter().zip(xr).map(|(&wv, &xv)| wv * xv).sum();
            out[r * out_dim + o] = dot + b[o];
        }
    }
    let shape = if x.shape.len() == 1 {
        vec![out_dim]
    } else {
        vec![batch, out_dim]
    };
    Tensor::new(shape, out)?.ensure_finite("matvec_like")
}

pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Backward of [`matvec_like`] given the forward input and `grad_out: [B, out]`.
pub fn matvec_like_backward<T: Real>(
    weights: &ParamTensor<T>,
    x: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (out_dim, in_dim) = weights.value.dims2()?;
    let (batch, x_in) = x.dims2()?;
    let (g_batch, g_out) = grad_out.dims2()?;
    if x_in != in_dim || g_out != out_dim || g_batch != batch {
        return Err(Error::shape(
            "matvec_like_backward",
            format!(
                "weights {:?}, input {:?}, grad {:?}",
                weights.value.shape(),
                x.shape(),
                grad_out.shape()
            ),
        ));
    }
    let w = weights.value.data();
    let mut gx = vec![T::zero(); batch * in_dim];
    let mut gw = vec![T::zero(); out_dim * in_dim];
    let mut gb = vec![T::zero(); out_dim];
    for r in 0..batch {
        let xr = x.row(r);
        let gr = grad_out.row(r);
        let gxr = &mut gx[r * in_dim..(r + 1) * in_dim];
        for o in 0..out_dim {
            let g = gr[o];
            if g == T::zero() {
                continue;
            }
            gb[o] += g;
            let wr = &w[o * in_dim..(o + 1) * in_dim];
            let gwr = &mut gw[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                gxr[i] += g * wr[i];
                gwr[i] += g * xr[i];
            }
        }
    }
    Ok(LinearGrads {
        input: Tensor::new(vec![batch, in_dim], gx)?,
        weights: Tensor::new(vec![out_dim, in_dim], gw)?,
        bias: Tensor::new(vec![out_dim], gb)?,
    })
}

/// Central-difference gradient of a scalar function.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor<f64>, eps: f64) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + eps;
        let up = f(&probe)?;
        probe.data[i] = orig - eps;
        let down = f(&probe)?;
        probe.data[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite_diff_grad: f is not finite around coordinate {i}"
            )));
        }
        grad.push((up - down) / (2.0 * eps));
    }
    Tensor::new(x.shape.clone(), grad)
}

/// Elementwise relative error with an absolute floor on the denominator,
/// maximized over coordinates.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    const FLOOR: f64 = 1e-4;
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(FLOOR))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(v.to_vec())
    }

    #[test]
    fn elementwise_examples() {
        let add = elementwise(ElementwiseOp::Add, &t(&[1., 2.]), &t(&[3., 4.])).unwrap();
        assert_eq!(add.data(), &[4., 6.]);
        let mul = elementwise(ElementwiseOp::Mul, &t(&[1., 2., 3.]), &t(&[0., 0., 0.])).unwrap();
        assert_eq!(mul.data(), &[0., 0., 0.]);
        let max = elementwise(ElementwiseOp::Max, &t(&[1., 5.]), &t(&[4., 2.])).unwrap();
        assert_eq!(max.data(), &[4., 5.]);
        let sub = elementwise(ElementwiseOp::Sub, &t(&[1., 5.]), &t(&[4., 2.])).unwrap();
        assert_eq!(sub.data(), &[-3., 3.]);
    }

    #[test]
    fn elementwise_channel_broadcast() {
        let a = Tensor::new(vec![1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = t(&[10., 20.]);
        let out = elementwise(ElementwiseOp::Add, &a, &b).unwrap();
        assert_eq!(out.data(), &[11., 12., 23., 24.]);
        assert_eq!(out.shape(), &[1, 2, 2]);
    }

    #[test]
    fn elementwise_rejects_mismatch() {
        let err = elementwise(ElementwiseOp::Add, &t(&[1., 2.]), &t(&[1., 2., 3.]));
        assert!(matches!(err, Err(Error::Shape { .. })));
    }

    #[test]
    fn elementwise_rejects_non_finite() {
        let err = elementwise(ElementwiseOp::Mul, &t(&[f64::MAX]), &t(&[10.]));
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    fn param(shape: Vec<usize>, v: &[f64]) -> ParamTensor<f64> {
        ParamTensor::new(Tensor::new(shape, v.to_vec()).unwrap())
    }

    #[test]
    fn matvec_examples() {
        let w = param(vec![2, 2], &[1., 0., 0., 1.]);
        let b = param(vec![2], &[0., 0.]);
        assert_eq!(
            matvec_like(&w, &t(&[3., 4.]), &b).unwrap().data(),
            &[3., 4.]
        );

        let w = param(vec![1, 2], &[1., 1.]);
        let b = param(vec![1], &[1.]);
        assert_eq!(matvec_like(&w, &t(&[2., 3.]), &b).unwrap().data(), &[6.]);

        let w = param(vec![1, 1], &[2.]);
        let b = param(vec![1], &[0.]);
        assert_eq!(matvec_like(&w, &t(&[0.]), &b).unwrap().data(), &[0.]);
    }

    #[test]
    fn matvec_dimension_mismatch() {
        let w = param(vec![1, 2], &[1., 1.]);
        let b = param(vec![1], &[1.]);
        assert!(matvec_like(&w, &t(&[1., 2., 3.]), &b).is_err());
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_grad(|x| Ok(x.data()[0] * x.data()[0]), &t(&[3.]), 1e-5).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-8);
        let g = finite_diff_grad(|_| Ok(7.0), &t(&[1., -2., 3.]), 1e-5).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn finite_diff_rejects_non_finite() {
        let res = finite_diff_grad(|x| Ok(1.0 / x.data()[0].abs().min(0.0)), &t(&[0.]), 1e-5);
        assert!(matches!(res, Err(Error::NonFinite(_))));
    }

    #[test]
    fn zero_grads_examples() {
        let mut p = param(vec![2], &[0., 0.]);
        p.grad = t(&[1., 2.]);
        zero_grads([&mut p]);
        assert_eq!(p.grad.data(), &[0., 0.]);
        zero_grads([&mut p]);
        assert_eq!(p.grad.data(), &[0., 0.]);
        zero_grads(Vec::<&mut ParamTensor<f64>>::new());
    }

    #[test]
    fn tensor_new_checks_length() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
    }
}
