//! AdamW with global-norm clipping and a warmup-cosine learning-rate schedule.
//!
//! SSM timesteps are updated in log space: the moments track the gradient with
//! respect to `ln(dt)`, so every update is multiplicative and keeps `dt > 0`
//! at any learning rate.
//!
//! After each step `dt` and `a_r` are held above small floors. Together they
//! keep `|Re(a)| dt >= 2e-15`, so `|abar| = exp(Re(a) dt)` stays strictly below
//! one in double precision instead of rounding to it.

use crate::network::{Network, TensorRole};

/// Smallest timestep the optimizer will produce.
pub const MIN_TIMESTEP: f64 = 1e-6;
/// Smallest `a_r`; `softplus(-20) ~ 2e-9` bounds the decay rate away from zero.
pub const MIN_A_R: f64 = -20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Maximum global gradient norm; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Fraction of the run spent in linear warmup.
    pub warmup_fraction: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            weight_decay: 0.02,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
            warmup_fraction: 0.01,
        }
    }
}

/// Linear warmup to `peak`, then cosine decay to zero at `total` steps.
pub fn lr_at(step: usize, total: usize, peak: f64, warmup_fraction: f64) -> f64 {
    let warmup = ((total as f64 * warmup_fraction).round() as usize).max(1);
    if step < warmup {
        return peak * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1) as f64;
    let progress = ((step - warmup) as f64 / span).min(1.0);
    0.5 * peak * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    total_steps: usize,
    step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

/// Outcome of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub lr: f64,
    pub grad_norm: f64,
}

impl AdamW {
    pub fn new(net: &Network, config: AdamWConfig, total_steps: usize) -> Self {
        let shapes: Vec<usize> = net.tensors().iter().map(|(_, t)| t.len()).collect();
        Self {
            config,
            total_steps,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, net: &mut Network, grad: &Network) -> StepInfo {
        let c = self.config;
        let lr = lr_at(self.step, self.total_steps, c.lr, c.warmup_fraction);
        self.step += 1;
        let grads: Vec<Vec<f64>> = grad
            .tensors()
            .into_iter()
            .zip(net.tensors())
            .map(|((meta, g), (_, w))| match meta.role {
                TensorRole::SsmTimestep => g.iter().zip(w).map(|(g, w)| g * w).collect(),
                _ => g.to_vec(),
            })
            .collect();
        let grad_norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        let scale = match c.clip_norm {
            Some(max) if grad_norm > max => max / grad_norm,
            _ => 1.0,
        };
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (k, (meta, w)) in net.tensors_mut().into_iter().enumerate() {
            if !meta.role.learnable() {
                continue;
            }
            let decay = if meta.role == TensorRole::Weight { c.weight_decay } else { 0.0 };
            let log_space = meta.role == TensorRole::SsmTimestep;
            let floor = match meta.role {
                TensorRole::SsmTimestep => MIN_TIMESTEP,
                TensorRole::SsmEigen if meta.name.ends_with("a_r") => MIN_A_R,
                _ => f64::NEG_INFINITY,
            };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (e, wv) in w.iter_mut().enumerate() {
                let g = grads[k][e] * scale;
                m[e] = c.beta1 * m[e] + (1.0 - c.beta1) * g;
                v[e] = c.beta2 * v[e] + (1.0 - c.beta2) * g * g;
                let update = lr * (m[e] / bc1) / ((v[e] / bc2).sqrt() + c.eps);
                if log_space {
                    *wv *= (-update).exp();
                } else {
                    *wv -= update + lr * decay * *wv;
                }
                *wv = wv.max(floor);
            }
        }
        StepInfo { lr, grad_norm }
    }
}
