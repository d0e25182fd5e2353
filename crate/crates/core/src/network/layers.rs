//! Non-SSM building blocks: reshape-project resampling, depthwise PreConv,
//! normalization and activations, each with its backward pass.
//!
//! Feature maps are `channels x time` arrays.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::config::{Activation, NormKind};
use crate::error::{Error, Result};

pub const NORM_EPS: f64 = 1e-5;

/// Channel projection `y = W x + b` applied at every time step. `W` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Projection {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Self {
        assert_eq!(weight.nrows(), bias.len());
        Self { weight, bias }
    }

    pub fn identity(ch: usize) -> Self {
        Self::new(Array2::eye(ch), Array1::zeros(ch))
    }

    pub fn zeros(out: usize, inp: usize) -> Self {
        Self::new(Array2::zeros((out, inp)), Array1::zeros(out))
    }

    pub fn in_features(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_features(&self) -> usize {
        self.weight.nrows()
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = self.weight.dot(&x);
        for (mut row, &b) in y.axis_iter_mut(Axis(0)).zip(&self.bias) {
            row += b;
        }
        y
    }

    /// Returns the input gradient and accumulates parameter gradients into `grad`.
    pub fn backward(&self, x: ArrayView2<f64>, gy: ArrayView2<f64>, grad: &mut Projection) -> Array2<f64> {
        grad.weight += &gy.dot(&x.t());
        grad.bias += &gy.sum_axis(Axis(1));
        self.weight.t().dot(&gy)
    }
}

/// `(C, L) -> (C r, L / r)`: row `c r + j`, column `t` holds `x[c][t r + j]`.
pub fn fold_time(x: ArrayView2<f64>, r: usize) -> Result<Array2<f64>> {
    let (c, len) = x.dim();
    if r == 0 || len % r != 0 {
        return Err(Error::Divisibility { len, factor: r });
    }
    let frames = len / r;
    Ok(Array2::from_shape_fn((c * r, frames), |(row, t)| x[(row / r, t * r + row % r)]))
}

/// Inverse of [`fold_time`]: `(C, L) -> (C / r, L r)`.
pub fn unfold_time(x: ArrayView2<f64>, r: usize) -> Result<Array2<f64>> {
    let (c, len) = x.dim();
    if r == 0 || c % r != 0 {
        return Err(Error::Divisibility { len: c, factor: r });
    }
    Ok(Array2::from_shape_fn((c / r, len * r), |(row, t)| x[(row * r + t % r, t / r)]))
}

/// Group `r` consecutive frames into channels, then project.
pub fn downsample(x: ArrayView2<f64>, r: usize, proj: &Projection) -> Result<Array2<f64>> {
    let folded = fold_time(x, r)?;
    check_proj(proj, folded.nrows())?;
    Ok(proj.apply(folded.view()))
}

/// Spread channel groups of size `r` over time, then project.
pub fn upsample(x: ArrayView2<f64>, r: usize, proj: &Projection) -> Result<Array2<f64>> {
    let unfolded = unfold_time(x, r)?;
    check_proj(proj, unfolded.nrows())?;
    Ok(proj.apply(unfolded.view()))
}

fn check_proj(proj: &Projection, features: usize) -> Result<()> {
    if proj.in_features() != features {
        return Err(Error::ShapeMismatch(format!(
            "projection takes {} features, got {features}",
            proj.in_features()
        )));
    }
    Ok(())
}

pub fn downsample_backward(
    x: ArrayView2<f64>,
    r: usize,
    proj: &Projection,
    gy: ArrayView2<f64>,
    grad: &mut Projection,
) -> Result<Array2<f64>> {
    let folded = fold_time(x, r)?;
    let g_folded = proj.backward(folded.view(), gy, grad);
    unfold_time(g_folded.view(), r)
}

pub fn upsample_backward(
    x: ArrayView2<f64>,
    r: usize,
    proj: &Projection,
    gy: ArrayView2<f64>,
    grad: &mut Projection,
) -> Result<Array2<f64>> {
    let unfolded = unfold_time(x, r)?;
    let g_unfolded = proj.backward(unfolded.view(), gy, grad);
    fold_time(g_unfolded.view(), r)
}

/// Depthwise width-3 centered convolution with zero padding. `kernel` is `C x 3`
/// with taps applied to `x[t-1], x[t], x[t+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreConv {
    pub kernel: Array2<f64>,
    pub bias: Array1<f64>,
}

impl PreConv {
    pub fn identity(ch: usize) -> Self {
        let mut kernel = Array2::zeros((ch, 3));
        kernel.column_mut(1).fill(1.0);
        Self { kernel, bias: Array1::zeros(ch) }
    }

    pub fn zeros(ch: usize) -> Self {
        Self { kernel: Array2::zeros((ch, 3)), bias: Array1::zeros(ch) }
    }

    pub fn channels(&self) -> usize {
        self.kernel.nrows()
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (c, len) = x.dim();
        if c != self.channels() {
            return Err(Error::ShapeMismatch(format!("preconv has {} channels, input {c}", self.channels())));
        }
        let mut y = Array2::zeros((c, len));
        for ch in 0..c {
            let (w0, w1, w2) = (self.kernel[(ch, 0)], self.kernel[(ch, 1)], self.kernel[(ch, 2)]);
            let b = self.bias[ch];
            let xs = x.row(ch);
            for t in 0..len {
                let prev = if t > 0 { xs[t - 1] } else { 0.0 };
                let next = if t + 1 < len { xs[t + 1] } else { 0.0 };
                y[(ch, t)] = w0 * prev + w1 * xs[t] + w2 * next + b;
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: ArrayView2<f64>, gy: ArrayView2<f64>, grad: &mut PreConv) -> Array2<f64> {
        let (c, len) = x.dim();
        let mut gx = Array2::zeros((c, len));
        for ch in 0..c {
            let (w0, w1, w2) = (self.kernel[(ch, 0)], self.kernel[(ch, 1)], self.kernel[(ch, 2)]);
            let xs = x.row(ch);
            let gs = gy.row(ch);
            let (mut g0, mut g1, mut g2, mut gb) = (0.0, 0.0, 0.0, 0.0);
            for t in 0..len {
                let g = gs[t];
                gb += g;
                g1 += g * xs[t];
                if t > 0 {
                    g0 += g * xs[t - 1];
                    gx[(ch, t - 1)] += w0 * g;
                }
                if t + 1 < len {
                    g2 += g * xs[t + 1];
                    gx[(ch, t + 1)] += w2 * g;
                }
                gx[(ch, t)] += w1 * g;
            }
            grad.kernel[(ch, 0)] += g0;
            grad.kernel[(ch, 1)] += g1;
            grad.kernel[(ch, 2)] += g2;
            grad.bias[ch] += gb;
        }
        gx
    }
}

/// Per-timestep LayerNorm over channels, or BatchNorm with frozen running
/// statistics, followed by a per-channel affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub kind: NormKind,
    pub weight: Array1<f64>,
    pub bias: Array1<f64>,
    /// BatchNorm only.
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

/// Saved forward quantities for [`Norm::backward`].
#[derive(Debug, Clone)]
pub struct NormCache {
    normalized: Array2<f64>,
    /// One entry per time step (layer) or per channel (batch).
    inv_std: Array1<f64>,
}

impl Norm {
    pub fn new(kind: NormKind, ch: usize) -> Self {
        Self {
            kind,
            weight: Array1::ones(ch),
            bias: Array1::zeros(ch),
            running_mean: Array1::zeros(ch),
            running_var: Array1::ones(ch),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let ch = self.weight.len();
        Self {
            kind: self.kind,
            weight: Array1::zeros(ch),
            bias: Array1::zeros(ch),
            running_mean: Array1::zeros(ch),
            running_var: Array1::zeros(ch),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, NormCache) {
        let (c, len) = x.dim();
        let mut normalized = Array2::zeros((c, len));
        let inv_std = match self.kind {
            NormKind::Layer => {
                let mut inv = Array1::zeros(len);
                for t in 0..len {
                    let col = x.column(t);
                    let mean = col.sum() / c as f64;
                    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                    let is = 1.0 / (var + NORM_EPS).sqrt();
                    inv[t] = is;
                    for ch in 0..c {
                        normalized[(ch, t)] = (x[(ch, t)] - mean) * is;
                    }
                }
                inv
            }
            NormKind::Batch => {
                let inv = self.running_var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());
                for ch in 0..c {
                    for t in 0..len {
                        normalized[(ch, t)] = (x[(ch, t)] - self.running_mean[ch]) * inv[ch];
                    }
                }
                inv
            }
        };
        let mut y = normalized.clone();
        for (ch, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
            row.mapv_inplace(|v| v * self.weight[ch] + self.bias[ch]);
        }
        (y, NormCache { normalized, inv_std })
    }

    pub fn backward(&self, cache: &NormCache, gy: ArrayView2<f64>, grad: &mut Norm) -> Array2<f64> {
        let (c, len) = gy.dim();
        let xhat = &cache.normalized;
        grad.weight += &(&gy * xhat).sum_axis(Axis(1));
        grad.bias += &gy.sum_axis(Axis(1));
        let mut gxhat = gy.to_owned();
        for (ch, mut row) in gxhat.axis_iter_mut(Axis(0)).enumerate() {
            row *= self.weight[ch];
        }
        match self.kind {
            NormKind::Layer => {
                let mut gx = Array2::zeros((c, len));
                let cf = c as f64;
                for t in 0..len {
                    let g = gxhat.column(t);
                    let xh = xhat.column(t);
                    let sum_g = g.sum();
                    let sum_gx = g.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>();
                    for ch in 0..c {
                        gx[(ch, t)] = cache.inv_std[t] / cf * (cf * g[ch] - sum_g - xh[ch] * sum_gx);
                    }
                }
                gx
            }
            NormKind::Batch => {
                for (ch, mut row) in gxhat.axis_iter_mut(Axis(0)).enumerate() {
                    row *= cache.inv_std[ch];
                }
                gxhat
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    crate::ssm::sigmoid(x)
}

pub fn activate(act: Activation, x: f64) -> f64 {
    match act {
        Activation::Silu => x * sigmoid(x),
        Activation::Relu => x.max(0.0),
    }
}

pub fn activate_grad(act: Activation, x: f64) -> f64 {
    match act {
        Activation::Silu => {
            let s = sigmoid(x);
            s * (1.0 + x * (1.0 - s))
        }
        Activation::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}
