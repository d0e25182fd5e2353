//! Step-by-step recurrent execution of one SSM layer.

use ndarray::Array2;
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::ssm::DiscreteSsm;

/// A [`DiscreteSsm`] cast to the working precision of a stream.
#[derive(Debug, Clone)]
pub struct RecurrentSsm<T> {
    pub n: usize,
    pub m: usize,
    pub h: usize,
    pub abar: Vec<Complex<T>>,
    pub bbar: Vec<Complex<T>>,
    pub c: Vec<T>,
}

impl<T: Real> From<&DiscreteSsm> for RecurrentSsm<T> {
    fn from(d: &DiscreteSsm) -> Self {
        let cast = |z: &num_complex::Complex64| Complex::new(T::of(z.re), T::of(z.im));
        Self {
            n: d.n,
            m: d.m,
            h: d.h,
            abar: d.abar.iter().map(cast).collect(),
            bbar: d.bbar.iter().map(cast).collect(),
            c: d.c.iter().map(|&c| T::of(c)).collect(),
        }
    }
}

impl<T: Real> RecurrentSsm<T> {
    pub fn zero_state(&self) -> Vec<Complex<T>> {
        vec![Complex::new(T::zero(), T::zero()); self.h]
    }
}

/// One step: `x <- abar * x + bbar u`, then `y = C Re(x)`.
pub fn step_recurrent<T: Real>(x: &mut [Complex<T>], ssm: &RecurrentSsm<T>, u: &[T], y: &mut [T]) {
    let (n, h) = (ssm.n, ssm.h);
    debug_assert_eq!(x.len(), h);
    debug_assert_eq!(u.len(), n);
    debug_assert_eq!(y.len(), ssm.m);
    for s in 0..h {
        let mut acc = ssm.abar[s] * x[s];
        for (b, &ui) in ssm.bbar[s * n..(s + 1) * n].iter().zip(u) {
            acc = acc + b.scale(ui);
        }
        x[s] = acc;
    }
    for (j, yj) in y.iter_mut().enumerate() {
        let row = &ssm.c[j * h..(j + 1) * h];
        *yj = row.iter().zip(x.iter()).fold(T::zero(), |a, (&c, xs)| a + c * xs.re);
    }
}

/// Runs the recurrence from a zero state over an `n x L` input.
pub fn run_recurrent<T: Real>(ssm: &RecurrentSsm<T>, input: &Array2<T>) -> Result<Array2<T>> {
    let (n, len) = input.dim();
    if n != ssm.n {
        return Err(Error::ShapeMismatch(format!("input has {n} channels, layer expects {}", ssm.n)));
    }
    let mut x = ssm.zero_state();
    let mut out = Array2::from_elem((ssm.m, len), T::zero());
    let mut u = vec![T::zero(); n];
    let mut y = vec![T::zero(); ssm.m];
    for t in 0..len {
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = input[(i, t)];
        }
        step_recurrent(&mut x, ssm, &u, &mut y);
        for (j, &yj) in y.iter().enumerate() {
            out[(j, t)] = yj;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::{discretize_zoh, init_ssm};

    #[test]
    fn zero_in_zero_out() {
        let d = discretize_zoh(&init_ssm(2, 3, 8, 0).unwrap());
        let r = RecurrentSsm::<f64>::from(&d);
        let mut x = r.zero_state();
        let mut y = vec![1.0; 3];
        step_recurrent(&mut x, &r, &[0.0, 0.0], &mut y);
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(x.iter().all(|z| z.re == 0.0 && z.im == 0.0));
    }

    #[test]
    fn first_impulse_output_is_c_bbar() {
        let d = discretize_zoh(&init_ssm(2, 3, 8, 4).unwrap());
        let r = RecurrentSsm::<f64>::from(&d);
        let mut x = r.zero_state();
        let mut y = vec![0.0; 3];
        step_recurrent(&mut x, &r, &[0.0, 1.0], &mut y);
        for (j, &yj) in y.iter().enumerate() {
            let want: f64 = (0..8).map(|s| d.c[j * 8 + s] * d.bbar[s * 2 + 1].re).sum();
            assert!((yj - want).abs() < 1e-14);
        }
    }
}
