//! Analytic gradients of an SSM layer's kernel with respect to its parameters.
//!
//! With `beta_s = (exp(dt a) - 1) / a` and `E_s[tau] = exp(tau dt a) beta_s`,
//! the kernel is `k[j][i][tau] = sum_s C[j][s] B[s][i] Re(E_s[tau])`. The
//! derivatives of `E` are
//!
//! ```text
//! dE/da  = tau dt E + exp(tau dt a) (dt a exp(dt a) - (exp(dt a) - 1)) / a^2
//! dE/ddt = tau a E  + exp(tau dt a) exp(dt a)
//! ```
//!
//! and `E` is holomorphic in `a`, so `dE/dRe(a) = dE/da` and `dE/dIm(a) = i dE/da`.
//! `Re(a) = -softplus(a_r)` contributes the factor `-sigmoid(a_r)`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ssm::{expm1_complex, phi1, sigmoid, ContinuousSsm, KernelBank, ZOH_SERIES_THRESHOLD};

/// Gradients for every parameter of one [`ContinuousSsm`], with matching shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub a_r: Vec<f64>,
    pub a_im: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub delta: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros(n: usize, m: usize, h: usize) -> Self {
        Self {
            a_r: vec![0.0; h],
            a_im: vec![0.0; h],
            b: vec![0.0; h * n],
            c: vec![0.0; m * h],
            delta: vec![0.0; h],
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.a_r, &self.a_im, &self.b, &self.c, &self.delta]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Adds these gradients into a same-shaped accumulator.
    pub fn accumulate_into(&self, acc: &mut ContinuousSsm) {
        let pairs: [(&mut Vec<f64>, &Vec<f64>); 5] = [
            (&mut acc.a_r, &self.a_r),
            (&mut acc.a_im, &self.a_im),
            (&mut acc.b, &self.b),
            (&mut acc.c, &self.c),
            (&mut acc.delta, &self.delta),
        ];
        for (dst, src) in pairs {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
}

/// `d beta / d a` for `beta = (exp(dt a) - 1) / a`.
fn dbeta_da(a: Complex64, dt: f64) -> Complex64 {
    let z = a * dt;
    if z.norm() < ZOH_SERIES_THRESHOLD {
        dt * dt * (0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0)
    } else {
        (dt * a * z.exp() - expm1_complex(z)) / (a * a)
    }
}

struct StateGrads {
    a_r: f64,
    a_im: f64,
    delta: f64,
    b: Vec<f64>,
    c: Vec<f64>,
}

/// Backpropagates an upstream kernel gradient `dL/dk` (`m x n x L`) to the
/// layer parameters.
pub fn kernel_gradients(ssm: &ContinuousSsm, upstream: &KernelBank) -> Result<GradientBundle> {
    let (n, m, h) = (ssm.n, ssm.m, ssm.h);
    if upstream.m != m || upstream.n != n {
        return Err(Error::ShapeMismatch(format!(
            "upstream kernel gradient is {}x{}, layer is {m}x{n}",
            upstream.m, upstream.n
        )));
    }
    let len = upstream.len;
    let per_state: Vec<StateGrads> = (0..h)
        .into_par_iter()
        .map(|s| {
            let a = ssm.a(s);
            let dt = ssm.delta[s];
            let z = a * dt;
            let abar = z.exp();
            let beta = phi1(z) * dt;
            let dbeta = dbeta_da(a, dt);

            let mut e = vec![Complex64::new(0.0, 0.0); len];
            let mut de_da = vec![Complex64::new(0.0, 0.0); len];
            let mut de_dt = vec![Complex64::new(0.0, 0.0); len];
            let mut p = Complex64::new(1.0, 0.0);
            for tau in 0..len {
                let t = tau as f64;
                let et = p * beta;
                e[tau] = et;
                de_da[tau] = t * dt * et + p * dbeta;
                de_dt[tau] = t * a * et + p * abar;
                p *= abar;
            }

            // R[i][tau] = sum_j C[j][s] dk[j][i][tau]
            let mut r = vec![0.0; n * len];
            for j in 0..m {
                let c = ssm.c[j * h + s];
                for i in 0..n {
                    for (rv, dk) in r[i * len..(i + 1) * len].iter_mut().zip(upstream.series(j, i)) {
                        *rv += c * dk;
                    }
                }
            }
            let b: Vec<f64> = (0..n)
                .map(|i| r[i * len..(i + 1) * len].iter().zip(&e).map(|(rv, ev)| rv * ev.re).sum())
                .collect();
            let c: Vec<f64> = (0..m)
                .map(|j| {
                    (0..n)
                        .map(|i| {
                            let bs = ssm.b[s * n + i];
                            bs * upstream.series(j, i).iter().zip(&e).map(|(dk, ev)| dk * ev.re).sum::<f64>()
                        })
                        .sum()
                })
                .collect();
            // Q[tau] = sum_i B[s][i] R[i][tau]
            let mut q = vec![0.0; len];
            for i in 0..n {
                let bs = ssm.b[s * n + i];
                for (qv, rv) in q.iter_mut().zip(&r[i * len..(i + 1) * len]) {
                    *qv += bs * rv;
                }
            }
            let mut g_re = 0.0;
            let mut g_im = 0.0;
            let mut g_dt = 0.0;
            for tau in 0..len {
                g_re += q[tau] * de_da[tau].re;
                g_im -= q[tau] * de_da[tau].im;
                g_dt += q[tau] * de_dt[tau].re;
            }
            StateGrads {
                a_r: -sigmoid(ssm.a_r[s]) * g_re,
                a_im: g_im,
                delta: g_dt,
                b,
                c,
            }
        })
        .collect();

    let mut out = GradientBundle::zeros(n, m, h);
    for (s, g) in per_state.into_iter().enumerate() {
        out.a_r[s] = g.a_r;
        out.a_im[s] = g.a_im;
        out.delta[s] = g.delta;
        out.b[s * n..(s + 1) * n].copy_from_slice(&g.b);
        for (j, v) in g.c.into_iter().enumerate() {
            out.c[j * h + s] = v;
        }
    }
    Ok(out)
}
