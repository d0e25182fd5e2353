//! Diagonal state-space layer: parameterization, initialization, zero-order-hold
//! discretization and impulse-response kernels.
//!
//! A layer maps `n` input channels to `m` output channels through `h` complex
//! states. The continuous dynamics are `x' = A x + B u` with `A` complex
//! diagonal, `Re(A) = -softplus(a_r)` and `Im(A) = a_im`. After discretization
//! the recurrence is
//!
//! ```text
//! x[t] = abar * x[t-1] + bbar u[t]
//! y[t] = C Re(x[t])
//! ```
//!
//! so the impulse response is `k[tau] = Re(C abar^tau bbar)` with `k[0] = C bbar`.
//! There is no feed-through (`D`) term; networks add an explicit residual path.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Below this `|dt * a|` the ZOH input factor switches to its Taylor series.
pub const ZOH_SERIES_THRESHOLD: f64 = 1e-4;

/// Initial value of the pre-softplus real-part parameter, giving `Re(A) = -1/2`.
pub const A_R_INIT: f64 = -0.4328;

const DT_MIN: f64 = 0.001;
const DT_MAX: f64 = 0.1;
const DT_BLOCK: usize = 16;

/// Condition number of the eigenvector matrix above which `diagonalize` gives up.
pub const MAX_EIGVEC_CONDITION: f64 = 1e12;

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `exp(z) - 1` without cancellation for small `|z|`.
pub fn expm1_complex(z: Complex64) -> Complex64 {
    let (s, c) = z.im.sin_cos();
    let half = (0.5 * z.im).sin();
    Complex64::new(
        z.re.exp_m1() * c - 2.0 * half * half,
        z.re.exp() * s,
    )
}

/// `(exp(z) - 1) / z`, continuous through `z = 0`.
pub fn phi1(z: Complex64) -> Complex64 {
    if z.norm() < ZOH_SERIES_THRESHOLD {
        1.0 + z / 2.0 + z * z / 6.0
    } else {
        expm1_complex(z) / z
    }
}

/// Learnable continuous-time parameters of one MIMO SSM layer.
///
/// Matrices are row-major: `b` is `h x n`, `c` is `m x h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSsm {
    pub n: usize,
    pub m: usize,
    pub h: usize,
    pub a_r: Vec<f64>,
    pub a_im: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub delta: Vec<f64>,
}

impl ContinuousSsm {
    /// All-zero parameters with the given shape. Used as a gradient accumulator.
    pub fn zeros(n: usize, m: usize, h: usize) -> Self {
        Self {
            n,
            m,
            h,
            a_r: vec![0.0; h],
            a_im: vec![0.0; h],
            b: vec![0.0; h * n],
            c: vec![0.0; m * h],
            delta: vec![0.0; h],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m, h) = (self.n, self.m, self.h);
        if n == 0 || m == 0 || h == 0 {
            return Err(Error::InvalidDimension(format!("ssm dims n={n} m={m} h={h}")));
        }
        let checks = [
            ("a_r", self.a_r.len(), h),
            ("a_im", self.a_im.len(), h),
            ("B", self.b.len(), h * n),
            ("C", self.c.len(), m * h),
            ("delta", self.delta.len(), h),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::ShapeMismatch(format!("{name}: {got} elements, expected {want}")));
            }
        }
        if let Some(d) = self.delta.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
            return Err(Error::InvalidParameter(format!("delta must be positive, got {d}")));
        }
        Ok(())
    }

    /// Continuous eigenvalue of state `s`.
    #[inline]
    pub fn a(&self, s: usize) -> Complex64 {
        Complex64::new(-softplus(self.a_r[s]), self.a_im[s])
    }

    pub fn param_count(&self) -> usize {
        self.a_r.len() + self.a_im.len() + self.b.len() + self.c.len() + self.delta.len()
    }
}

/// Timestep of state `i` for a layer with `h` states.
///
/// States come in blocks of 16 sharing one timestep; block timesteps are
/// geometrically spaced from 0.001 (first block) to 0.1 (last block).
pub fn init_delta(i: usize, h: usize) -> f64 {
    let blocks = h.div_ceil(DT_BLOCK);
    let span = blocks.saturating_sub(1).max(1) as f64;
    let block = (i / DT_BLOCK) as f64;
    DT_MIN * (DT_MAX / DT_MIN).powf(block / span)
}

/// Fresh layer: `Re(A) = -1/2`, `Im(A)` on the ladder `0, pi, 2 pi, ...`,
/// `B` all ones, `C` Kaiming-normal with fan-in `h`, block-geometric timesteps.
pub fn init_ssm(n: usize, m: usize, h: usize, seed: u64) -> Result<ContinuousSsm> {
    if n == 0 || m == 0 || h == 0 {
        return Err(Error::InvalidDimension(format!("ssm dims n={n} m={m} h={h}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, (2.0 / h as f64).sqrt()).expect("finite std");
    Ok(ContinuousSsm {
        n,
        m,
        h,
        a_r: vec![A_R_INIT; h],
        a_im: (0..h).map(|i| std::f64::consts::PI * i as f64).collect(),
        b: vec![1.0; h * n],
        c: (0..m * h).map(|_| normal.sample(&mut rng)).collect(),
        delta: (0..h).map(|i| init_delta(i, h)).collect(),
    })
}

/// Inference-ready diagonal system. `bbar` is `h x n` and complex because the
/// ZOH factor of a complex eigenvalue is complex; `c` stays real.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSsm {
    pub n: usize,
    pub m: usize,
    pub h: usize,
    pub abar: Vec<Complex64>,
    pub bbar: Vec<Complex64>,
    pub c: Vec<f64>,
}

impl DiscreteSsm {
    pub fn max_abar_modulus(&self) -> f64 {
        self.abar.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }
}

/// Zero-order hold, elementwise on the diagonal:
/// `abar = exp(dt a)`, `bbar = (exp(dt a) - 1) / a * B = dt * phi1(dt a) * B`.
pub fn discretize_zoh(ssm: &ContinuousSsm) -> DiscreteSsm {
    let (n, h) = (ssm.n, ssm.h);
    let mut abar = Vec::with_capacity(h);
    let mut bbar = Vec::with_capacity(h * n);
    for s in 0..h {
        let dt = ssm.delta[s];
        let z = ssm.a(s) * dt;
        abar.push(z.exp());
        let gain = phi1(z) * dt;
        bbar.extend(ssm.b[s * n..(s + 1) * n].iter().map(|&b| gain * b));
    }
    DiscreteSsm {
        n,
        m: ssm.m,
        h,
        abar,
        bbar,
        c: ssm.c.clone(),
    }
}

/// Materialized real kernels, `m x n x len`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    pub m: usize,
    pub n: usize,
    pub len: usize,
    pub k: Vec<f64>,
}

impl KernelBank {
    pub fn zeros(m: usize, n: usize, len: usize) -> Self {
        Self { m, n, len, k: vec![0.0; m * n * len] }
    }

    #[inline]
    pub fn at(&self, j: usize, i: usize, tau: usize) -> f64 {
        self.k[(j * self.n + i) * self.len + tau]
    }

    pub fn series(&self, j: usize, i: usize) -> &[f64] {
        let start = (j * self.n + i) * self.len;
        &self.k[start..start + self.len]
    }

    pub fn series_mut(&mut self, j: usize, i: usize) -> &mut [f64] {
        let start = (j * self.n + i) * self.len;
        &mut self.k[start..start + self.len]
    }
}

/// `k[j][i][tau] = Re(sum_s C[j][s] abar_s^tau bbar[s][i])` for `tau < len`.
pub fn materialize_kernel(d: &DiscreteSsm, len: usize) -> KernelBank {
    let (n, m, h) = (d.n, d.m, d.h);
    let mut bank = KernelBank::zeros(m, n, len);
    let mut mode = vec![0.0; len];
    for s in 0..h {
        for i in 0..n {
            let mut p = d.bbar[s * n + i];
            for v in mode.iter_mut() {
                *v = p.re;
                p *= d.abar[s];
            }
            for j in 0..m {
                let c = d.c[j * h + s];
                if c == 0.0 {
                    continue;
                }
                for (k, v) in bank.series_mut(j, i).iter_mut().zip(&mode) {
                    *k += c * v;
                }
            }
        }
    }
    bank
}

/// A discrete system with a dense real state matrix, `x[t] = A x[t-1] + B u[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSsm {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

/// Diagonal system with complex input and output matrices, the result of
/// absorbing an eigenbasis change into `B` and `C`.
#[derive(Debug, Clone)]
pub struct DiagonalSsm {
    pub eigenvalues: Vec<Complex64>,
    /// `h x n`
    pub b: DMatrix<Complex64>,
    /// `m x h`
    pub c: DMatrix<Complex64>,
}

impl DiagonalSsm {
    /// Complex kernel `C Lambda^tau B`, laid out `m x n x len`.
    pub fn kernel(&self, len: usize) -> Vec<Complex64> {
        let (m, h, n) = (self.c.nrows(), self.c.ncols(), self.b.ncols());
        let mut out = vec![Complex64::new(0.0, 0.0); m * n * len];
        for s in 0..h {
            let mut p = Complex64::new(1.0, 0.0);
            for tau in 0..len {
                for j in 0..m {
                    let cj = self.c[(j, s)] * p;
                    for i in 0..n {
                        out[(j * n + i) * len + tau] += cj * self.b[(s, i)];
                    }
                }
                p *= self.eigenvalues[s];
            }
        }
        out
    }
}

/// Eigendecomposition `A = V Lambda V^-1`, absorbed as `B' = V^-1 B`, `C' = C V`.
pub fn diagonalize(dense: &DenseSsm) -> Result<DiagonalSsm> {
    let h = dense.a.nrows();
    if h == 0 || dense.a.ncols() != h {
        return Err(Error::ShapeMismatch(format!(
            "state matrix must be square, got {}x{}",
            dense.a.nrows(),
            dense.a.ncols()
        )));
    }
    if dense.b.nrows() != h || dense.c.ncols() != h {
        return Err(Error::ShapeMismatch(format!(
            "B is {}x{}, C is {}x{} for {h} states",
            dense.b.nrows(),
            dense.b.ncols(),
            dense.c.nrows(),
            dense.c.ncols()
        )));
    }
    let eigenvalues: Vec<Complex64> = dense.a.complex_eigenvalues().iter().copied().collect();
    let a_c = dense.a.map(|x| Complex64::new(x, 0.0));
    let scale = dense.a.norm().max(1.0);
    let cluster_tol = 1e-7 * scale;
    let null_tol = 1e-6 * scale;

    let mut v = DMatrix::<Complex64>::zeros(h, h);
    let mut done = vec![false; h];
    for s in 0..h {
        if done[s] {
            continue;
        }
        // Eigenvalues that coincide numerically share one null space.
        let group: Vec<usize> = (s..h)
            .filter(|&t| !done[t] && (eigenvalues[t] - eigenvalues[s]).norm() < cluster_tol)
            .collect();
        let lambda = group.iter().map(|&t| eigenvalues[t]).sum::<Complex64>() / group.len() as f64;
        let shifted = &a_c - DMatrix::<Complex64>::identity(h, h) * lambda;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("requested right singular vectors");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]));
        // A defective eigenvalue has a null space smaller than its multiplicity.
        if let Some(&row) = order.get(group.len() - 1) {
            if svd.singular_values[row] > null_tol {
                return Err(Error::NonDiagonalizable { condition: f64::INFINITY });
            }
        }
        for (&t, &row) in group.iter().zip(&order) {
            for r in 0..h {
                v[(r, t)] = v_t[(row, r)].conj();
            }
            done[t] = true;
        }
    }

    let sv = v.clone().svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_EIGVEC_CONDITION) {
        return Err(Error::NonDiagonalizable { condition });
    }
    let v_inv = v
        .clone()
        .try_inverse()
        .ok_or(Error::NonDiagonalizable { condition })?;
    let b = &v_inv * dense.b.map(|x| Complex64::new(x, 0.0));
    let c = dense.c.map(|x| Complex64::new(x, 0.0)) * &v;
    Ok(DiagonalSsm { eigenvalues, b, c })
}
