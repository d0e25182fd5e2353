//! Reference implementations shared by the integration tests.
//!
//! Each oracle is written from first principles (power series, dense matrix
//! powers, direct convolution, explicit recurrences) and shares no code with
//! the implementation it checks.

#![allow(dead_code)]

use nalgebra::DMatrix;
use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use deepssm::audio::DEFAULT_MU;
use deepssm::ssm::{diagonalize, discretize_zoh, materialize_kernel, ContinuousSsm, DenseSsm, DiscreteSsm, KernelBank};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_ssm(r: &mut ChaCha8Rng, n: usize, m: usize, h: usize) -> ContinuousSsm {
    ContinuousSsm {
        n,
        m,
        h,
        a_r: (0..h).map(|_| r.random_range(-2.0..1.0)).collect(),
        a_im: (0..h).map(|_| r.random_range(-3.0..3.0)).collect(),
        b: (0..h * n).map(|_| r.random_range(-1.0..1.0)).collect(),
        c: (0..m * h).map(|_| r.random_range(-1.0..1.0)).collect(),
        delta: (0..h).map(|_| 10f64.powf(r.random_range(-3.0..-1.0))).collect(),
    }
}

/// exp(z) and (exp(z) - 1) / z from 30 Taylor terms.
pub fn zoh_series(z: Complex64) -> (Complex64, Complex64) {
    let mut term = Complex64::new(1.0, 0.0);
    let (mut e, mut phi) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    for k in 0..30 {
        e += term;
        phi += term / (k as f64 + 1.0);
        term *= z / (k as f64 + 1.0);
    }
    (e, phi)
}

pub fn softplus(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}

pub fn rel(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Kernel by an explicit state recurrence driven by a unit impulse per input.
pub fn impulse_response(d: &DiscreteSsm, len: usize) -> Vec<f64> {
    let (n, m, h) = (d.n, d.m, d.h);
    let mut k = vec![0.0; m * n * len];
    for i in 0..n {
        let mut x = vec![Complex64::new(0.0, 0.0); h];
        for t in 0..len {
            let u = if t == 0 { 1.0 } else { 0.0 };
            for s in 0..h {
                x[s] = d.abar[s] * x[s] + d.bbar[s * n + i] * u;
            }
            for j in 0..m {
                k[(j * n + i) * len + t] = (0..h).map(|s| d.c[j * h + s] * x[s].re).sum();
            }
        }
    }
    k
}

pub fn direct_convolution(u: &Array2<f64>, k: &[f64], m: usize) -> Array2<f64> {
    let (n, len) = u.dim();
    let mut y = Array2::zeros((m, len));
    for j in 0..m {
        for i in 0..n {
            let kern = &k[(j * n + i) * len..(j * n + i + 1) * len];
            for t in 0..len {
                let mut acc = 0.0;
                for tau in 0..=t {
                    acc += kern[tau] * u[(i, t - tau)];
                }
                y[(j, t)] += acc;
            }
        }
    }
    y
}

pub fn random_input(r: &mut ChaCha8Rng, n: usize, len: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, len), |_| r.random_range(-1.0..1.0))
}

pub fn rel_l2(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

pub fn dense_power_kernel(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, len: usize) -> Vec<DMatrix<f64>> {
    let mut p = DMatrix::identity(a.nrows(), a.nrows());
    (0..len)
        .map(|_| {
            let k = c * &p * b;
            p = a * &p;
            k
        })
        .collect()
}

pub fn diagonal_kernel_matches(dense: &DenseSsm, len: usize, tol: f64) {
    let diag = diagonalize(dense).unwrap();
    let k = diag.kernel(len);
    let oracle = dense_power_kernel(&dense.a, &dense.b, &dense.c, len);
    let (m, n) = (dense.c.nrows(), dense.b.ncols());
    for (tau, o) in oracle.iter().enumerate() {
        for j in 0..m {
            for i in 0..n {
                let z = k[(j * n + i) * len + tau];
                assert!((z.re - o[(j, i)]).abs() < tol, "tau {tau}: {} vs {}", z.re, o[(j, i)]);
                assert!(z.im.abs() < tol, "imaginary residue {}", z.im);
            }
        }
    }
}

pub fn random_stable_dense(r: &mut ChaCha8Rng, h: usize, n: usize, m: usize) -> DenseSsm {
    let a = DMatrix::from_fn(h, h, |_, _| r.random_range(-1.0..1.0));
    // Rescale to spectral radius 0.95 so powers stay bounded over the horizon.
    let radius = a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    DenseSsm {
        a: a * (0.95 / radius),
        b: DMatrix::from_fn(h, n, |_, _| r.random_range(-1.0..1.0)),
        c: DMatrix::from_fn(m, h, |_, _| r.random_range(-1.0..1.0)),
    }
}

/// `sum(G * k)` for the kernel of `ssm`, the scalar the gradient oracle differentiates.
pub fn probe(ssm: &ContinuousSsm, g: &KernelBank) -> f64 {
    let k = materialize_kernel(&discretize_zoh(ssm), g.len);
    k.k.iter().zip(&g.k).map(|(a, b)| a * b).sum()
}

/// Reference mu-law: explicit level table, nearest level in the companded domain.
pub struct MuLawOracle {
    pub levels: Vec<f64>,
    pub companded: Vec<f64>,
}

impl MuLawOracle {
    pub fn new(bits: u32) -> Self {
        let q = (1i64 << (bits - 1)) - 1;
        let mut levels = Vec::new();
        let mut companded = Vec::new();
        for k in -q..=q {
            let y = k as f64 / q as f64;
            companded.push(y);
            levels.push(y.signum() * ((1.0 + DEFAULT_MU).powf(y.abs()) - 1.0) / DEFAULT_MU);
        }
        Self { levels, companded }
    }

    pub fn apply(&self, x: f64) -> f64 {
        let y = x.signum() * (1.0 + DEFAULT_MU * x.abs()).ln() / (1.0 + DEFAULT_MU).ln();
        let mut best = 0;
        for (k, c) in self.companded.iter().enumerate() {
            let d = (c - y).abs();
            let bd = (self.companded[best] - y).abs();
            // Ties round away from zero.
            if d < bd - 1e-15 || ((d - bd).abs() <= 1e-15 && c.abs() > self.companded[best].abs()) {
                best = k;
            }
        }
        self.levels[best]
    }
}
