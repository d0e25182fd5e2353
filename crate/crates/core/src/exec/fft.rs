//! Batch execution of an SSM layer as a causal long convolution in the
//! Fourier domain, in either contraction order, plus its adjoint.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::planner::{plan_contraction, ContractionDims, Variant};
use crate::ssm::{materialize_kernel, DiscreteSsm, KernelBank};

/// States processed together before output channels are updated in parallel.
const STATE_BLOCK: usize = 16;

type FftPair = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

struct CachedPlan {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    twiddles: Arc<Vec<Complex64>>,
}

fn cached_plan(len: usize) -> (FftPair, Arc<Vec<Complex64>>) {
    static CACHE: OnceLock<Mutex<(FftPlanner<f64>, HashMap<usize, CachedPlan>)>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new((FftPlanner::new(), HashMap::new())));
    let mut guard = cache.lock().expect("fft cache poisoned");
    let (planner, plans) = &mut *guard;
    let entry = plans.entry(len).or_insert_with(|| CachedPlan {
        forward: planner.plan_fft_forward(len),
        inverse: planner.plan_fft_inverse(len),
        twiddles: Arc::new(
            (0..len)
                .map(|f| Complex64::from_polar(1.0, -2.0 * PI * f as f64 / len as f64))
                .collect(),
        ),
    });
    ((entry.forward.clone(), entry.inverse.clone()), entry.twiddles.clone())
}

/// Zero-padded transform length for linear convolution of `signal_len`
/// samples with a kernel of the same length.
#[derive(Clone)]
pub struct FftPlan {
    pub signal_len: usize,
    pub fft_len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// `exp(-2 pi i f / fft_len)` for every bin `f`.
    twiddles: Arc<Vec<Complex64>>,
}

impl std::fmt::Debug for FftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftPlan")
            .field("signal_len", &self.signal_len)
            .field("fft_len", &self.fft_len)
            .finish()
    }
}

impl FftPlan {
    pub fn new(signal_len: usize) -> Self {
        let fft_len = (2 * signal_len.max(1)).next_power_of_two();
        let ((forward, inverse), twiddles) = cached_plan(fft_len);
        Self { signal_len, fft_len, forward, inverse, twiddles }
    }

    pub fn forward_real(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft_len];
        for (b, &v) in buf.iter_mut().zip(x) {
            b.re = v;
        }
        self.forward.process(&mut buf);
        buf
    }

    /// Inverse transform keeping the real part of the first `signal_len` samples.
    pub fn inverse_real(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.inverse.process(&mut spec);
        let scale = 1.0 / self.fft_len as f64;
        spec[..self.signal_len].iter().map(|z| z.re * scale).collect()
    }

    pub fn forward_complex(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
    }
}

/// Spectrum of the basis kernel `abar^t` for `t < len`, zero-padded to `fft_len`.
///
/// Uses the closed form of the truncated geometric series and falls back to
/// direct summation where the ratio is close to one.
pub fn basis_spectrum(abar: Complex64, len: usize, fft_len: usize) -> Vec<Complex64> {
    let plan = FftPlan::new_with_fft_len(len, fft_len);
    plan.basis_spectrum(abar)
}

impl FftPlan {
    /// Plan with an explicit transform length (at least `signal_len`).
    pub fn new_with_fft_len(signal_len: usize, fft_len: usize) -> Self {
        assert!(fft_len >= signal_len.max(1));
        let ((forward, inverse), twiddles) = cached_plan(fft_len);
        Self { signal_len, fft_len, forward, inverse, twiddles }
    }

    /// See [`basis_spectrum`].
    pub fn basis_spectrum(&self, abar: Complex64) -> Vec<Complex64> {
        let (len, fft_len) = (self.signal_len, self.fft_len);
        let w = &self.twiddles;
        let one = Complex64::new(1.0, 0.0);
        let abar_l = abar.powu(len as u32);
        (0..fft_len)
            .map(|f| {
                let r = abar * w[f];
                let denom = one - r;
                if denom.norm_sqr() < 1e-6 {
                    let mut acc = Complex64::new(0.0, 0.0);
                    let mut p = one;
                    for _ in 0..len {
                        acc += p;
                        p *= r;
                    }
                    acc
                } else {
                    // r^len = abar^len * w^(f len)
                    let twist = w[(f * len) % fft_len];
                    (one - abar_l * twist) / denom
                }
            })
            .collect()
    }
}

/// Replace a spectrum by the spectrum of the real part of its time signal.
pub fn real_part_spectrum(spec: &mut [Complex64]) {
    let f_len = spec.len();
    let orig = spec.to_vec();
    for (f, z) in spec.iter_mut().enumerate() {
        *z = (orig[f] + orig[(f_len - f) % f_len].conj()) * 0.5;
    }
}

/// Spectra of the real kernels `k[j][i]`, indexed `j * n + i`
/// (kernel-first contraction). The kernels are summed over states in the
/// time domain, which equals the sum of `C bbar` weighted basis spectra
/// followed by the real-part projection, at `O(h L)` instead of `O(h F)`
/// complex divisions.
pub fn kernel_spectra(d: &DiscreteSsm, plan: &FftPlan) -> Vec<Vec<Complex64>> {
    let bank = materialize_kernel(d, plan.signal_len);
    (0..d.m * d.n)
        .into_par_iter()
        .map(|ji| plan.forward_real(bank.series(ji / d.n, ji % d.n)))
        .collect()
}

/// Order chosen by the planner for a single-example call.
pub fn planned_variant(d: &DiscreteSsm, len: usize) -> Variant {
    let dims = ContractionDims {
        batch: 1,
        inputs: d.n as u64,
        outputs: d.m as u64,
        states: d.h as u64,
        modes: FftPlan::new(len).fft_len as u64,
    };
    plan_contraction(&dims)
        .map(|o| o.variant)
        .unwrap_or(Variant::InputProjectFirst)
}

/// Causal linear convolution of `input` (`n x L`) with the layer's full-length
/// kernels: `y[j][t] = sum_i sum_{tau <= t} k[j][i][tau] u[i][t - tau]`.
pub fn fft_convolve(input: ArrayView2<f64>, d: &DiscreteSsm, variant: Variant) -> Result<Array2<f64>> {
    let (n, len) = input.dim();
    if n != d.n {
        return Err(Error::ShapeMismatch(format!("input has {n} channels, layer expects {}", d.n)));
    }
    if len == 0 {
        return Err(Error::InvalidDimension("input length must be >= 1".into()));
    }
    let plan = FftPlan::new(len);
    let inputs: Vec<Vec<Complex64>> = (0..n)
        .into_par_iter()
        .map(|i| plan.forward_real(&input.row(i).to_vec()))
        .collect();

    let out_spectra = match variant {
        Variant::InputProjectFirst => input_project_first(d, &plan, &inputs),
        Variant::KernelFirst => kernel_first(d, &plan, &inputs),
    };
    let rows: Vec<Vec<f64>> = out_spectra
        .into_par_iter()
        .map(|spec| plan.inverse_real(spec))
        .collect();
    let mut out = Array2::zeros((d.m, len));
    for (j, row) in rows.iter().enumerate() {
        out.row_mut(j).assign(&ndarray::ArrayView1::from(row.as_slice()));
    }
    Ok(out)
}

fn input_project_first(d: &DiscreteSsm, plan: &FftPlan, inputs: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
    let (n, m, h) = (d.n, d.m, d.h);
    let fft_len = plan.fft_len;
    let mut out = vec![vec![Complex64::new(0.0, 0.0); fft_len]; m];
    for block in (0..h).collect::<Vec<_>>().chunks(STATE_BLOCK) {
        // x_hat[s][f] = (sum_i bbar[s][i] u_hat[i][f]) * K_hat[s][f]
        let states: Vec<Vec<Complex64>> = block
            .par_iter()
            .map(|&s| {
                let mut x = plan.basis_spectrum(d.abar[s]);
                let mut proj = vec![Complex64::new(0.0, 0.0); fft_len];
                for (i, u) in inputs.iter().enumerate() {
                    let b = d.bbar[s * n + i];
                    for (p, uf) in proj.iter_mut().zip(u) {
                        *p += b * uf;
                    }
                }
                for (xf, p) in x.iter_mut().zip(&proj) {
                    *xf *= p;
                }
                x
            })
            .collect();
        out.par_iter_mut().enumerate().for_each(|(j, y)| {
            for (&s, x) in block.iter().zip(&states) {
                let c = d.c[j * h + s];
                for (yf, xf) in y.iter_mut().zip(x) {
                    *yf += xf * c;
                }
            }
        });
    }
    // C is real, so taking the real part commutes with the readout.
    out.par_iter_mut().for_each(|y| real_part_spectrum(y));
    out
}

fn kernel_first(d: &DiscreteSsm, plan: &FftPlan, inputs: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
    let (n, m) = (d.n, d.m);
    let kernels = kernel_spectra(d, plan);
    (0..m)
        .into_par_iter()
        .map(|j| {
            let mut y = vec![Complex64::new(0.0, 0.0); plan.fft_len];
            for (i, u) in inputs.iter().enumerate() {
                for ((yf, uf), kf) in y.iter_mut().zip(u).zip(&kernels[j * n + i]) {
                    *yf += uf * kf;
                }
            }
            y
        })
        .collect()
}

/// Adjoint of [`fft_convolve`]: given the layer input and the gradient of the
/// loss with respect to the output, returns the input gradient (`n x L`) and
/// the kernel gradient (`m x n x L`).
pub fn fft_convolve_backward(
    input: ArrayView2<f64>,
    d: &DiscreteSsm,
    grad_out: ArrayView2<f64>,
) -> Result<(Array2<f64>, KernelBank)> {
    let (n, len) = input.dim();
    if n != d.n || grad_out.dim() != (d.m, len) {
        return Err(Error::ShapeMismatch(format!(
            "input {:?} / grad {:?} for layer n={} m={}",
            input.dim(),
            grad_out.dim(),
            d.n,
            d.m
        )));
    }
    let m = d.m;
    let plan = FftPlan::new(len);
    let u_hat: Vec<Vec<Complex64>> = (0..n)
        .into_par_iter()
        .map(|i| plan.forward_real(&input.row(i).to_vec()))
        .collect();
    let g_hat: Vec<Vec<Complex64>> = (0..m)
        .into_par_iter()
        .map(|j| plan.forward_real(&grad_out.row(j).to_vec()))
        .collect();

    // dk[j][i][tau] = sum_t g[j][t] u[i][t - tau]
    let dk_rows: Vec<Vec<f64>> = (0..m * n)
        .into_par_iter()
        .map(|ji| {
            let (j, i) = (ji / n, ji % n);
            let spec: Vec<Complex64> = g_hat[j].iter().zip(&u_hat[i]).map(|(g, u)| g * u.conj()).collect();
            plan.inverse_real(spec)
        })
        .collect();
    let mut dk = KernelBank::zeros(m, n, len);
    for (ji, row) in dk_rows.iter().enumerate() {
        dk.series_mut(ji / n, ji % n).copy_from_slice(row);
    }

    // du[i][s] = sum_j sum_t g[j][t] k[j][i][t - s]
    let kernels = kernel_spectra(d, &plan);
    let du_rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![Complex64::new(0.0, 0.0); plan.fft_len];
            for (j, g) in g_hat.iter().enumerate() {
                for ((a, gf), kf) in acc.iter_mut().zip(g).zip(&kernels[j * n + i]) {
                    *a += gf * kf.conj();
                }
            }
            plan.inverse_real(acc)
        })
        .collect();
    let mut du = Array2::zeros((n, len));
    for (i, row) in du_rows.iter().enumerate() {
        du.row_mut(i).assign(&ndarray::ArrayView1::from(row.as_slice()));
    }
    Ok((du, dk))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::{discretize_zoh, init_ssm, materialize_kernel};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_input(n: usize, len: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, len), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn basis_spectrum_matches_fft_of_powers() {
        let plan = FftPlan::new(50);
        for abar in [Complex64::new(0.9, 0.3), Complex64::new(0.0, 1.0), Complex64::new(0.9995, 0.0)] {
            let mut direct = vec![Complex64::new(0.0, 0.0); plan.fft_len];
            let mut p = Complex64::new(1.0, 0.0);
            for v in direct.iter_mut().take(50) {
                *v = p;
                p *= abar;
            }
            plan.forward_complex(&mut direct);
            let closed = basis_spectrum(abar, 50, plan.fft_len);
            for (a, b) in direct.iter().zip(&closed) {
                assert!((a - b).norm() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn impulse_returns_kernel() {
        let d = discretize_zoh(&init_ssm(3, 2, 16, 1).unwrap());
        let mut u = Array2::zeros((3, 40));
        u[(0, 0)] = 1.0;
        let bank = materialize_kernel(&d, 40);
        for variant in [Variant::InputProjectFirst, Variant::KernelFirst] {
            let y = fft_convolve(u.view(), &d, variant).unwrap();
            for j in 0..2 {
                for t in 0..40 {
                    assert!((y[(j, t)] - bank.at(j, 0, t)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn linear_in_input() {
        let d = discretize_zoh(&init_ssm(2, 2, 8, 2).unwrap());
        let u = random_input(2, 33, 5);
        let y1 = fft_convolve(u.view(), &d, Variant::InputProjectFirst).unwrap();
        let y2 = fft_convolve((&u * 2.0).view(), &d, Variant::InputProjectFirst).unwrap();
        for (a, b) in y1.iter().zip(y2.iter()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn no_circular_wraparound() {
        let d = discretize_zoh(&init_ssm(1, 1, 16, 3).unwrap());
        let len = 64;
        let mut u = Array2::zeros((1, len));
        u[(0, len - 1)] = 1.0;
        for variant in [Variant::InputProjectFirst, Variant::KernelFirst] {
            let y = fft_convolve(u.view(), &d, variant).unwrap();
            for t in 0..len - 1 {
                assert!(y[(0, t)].abs() < 1e-10, "leak at {t}: {}", y[(0, t)]);
            }
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let d = discretize_zoh(&init_ssm(2, 1, 4, 0).unwrap());
        let u = Array2::zeros((3, 8));
        assert!(matches!(fft_convolve(u.view(), &d, Variant::KernelFirst), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn adjoint_identity() {
        // <conv(u), g> = <u, du(g)> and = <k, dk(g)>
        let d = discretize_zoh(&init_ssm(2, 3, 8, 9).unwrap());
        let u = random_input(2, 37, 1);
        let g = random_input(3, 37, 2);
        let y = fft_convolve(u.view(), &d, Variant::KernelFirst).unwrap();
        let (du, dk) = fft_convolve_backward(u.view(), &d, g.view()).unwrap();
        let lhs: f64 = y.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        let via_u: f64 = u.iter().zip(du.iter()).map(|(a, b)| a * b).sum();
        let bank = materialize_kernel(&d, 37);
        let via_k: f64 = bank.k.iter().zip(&dk.k).map(|(a, b)| a * b).sum();
        assert!((lhs - via_u).abs() < 1e-10 * lhs.abs().max(1.0));
        assert!((lhs - via_k).abs() < 1e-10 * lhs.abs().max(1.0));
    }
}
