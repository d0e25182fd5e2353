//! Contraction-order planning for the Fourier-domain SSM einsum
//! `y[b,j,f] = x[b,i,f] * Bbar[n,i] * K[n,f] * C[j,n]`.
//!
//! Two orders are considered:
//!
//! - input-project-first: project inputs onto the states, multiply by the
//!   basis-kernel spectra, then read out. Cost `BNIF + BNF + BJNF`.
//! - kernel-first: build the full `J x I` kernel spectra, then convolve.
//!   Cost `JNI + JNIF + BJIF`.
//!
//! The decision uses the leading-order comparison `BNF(I+J)` vs `JIF(B+N)`,
//! i.e. input-project-first wins iff `1/B + 1/N > 1/I + 1/J`.

use std::fmt;

use crate::error::{Error, Result};

/// Sizes of the batch, input-channel, output-channel, state and Fourier-mode axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContractionDims {
    pub batch: u64,
    pub inputs: u64,
    pub outputs: u64,
    pub states: u64,
    pub modes: u64,
}

impl ContractionDims {
    pub fn new(batch: u64, inputs: u64, outputs: u64, states: u64, modes: u64) -> Result<Self> {
        let d = Self { batch, inputs, outputs, states, modes };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.batch, self.inputs, self.outputs, self.states, self.modes].contains(&0) {
            return Err(Error::InvalidDimension(format!("contraction dims must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    InputProjectFirst,
    KernelFirst,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::InputProjectFirst => "input-project-first",
            Variant::KernelFirst => "kernel-first",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContractionOrder {
    pub variant: Variant,
    /// Exact multiply-accumulate count of `variant` under the cost model.
    pub cost: u128,
}

fn mul(xs: &[u64]) -> Result<u128> {
    xs.iter()
        .try_fold(1u128, |acc, &x| acc.checked_mul(x as u128))
        .ok_or(Error::Overflow)
}

fn add(xs: &[u128]) -> Result<u128> {
    xs.iter()
        .try_fold(0u128, |acc, &x| acc.checked_add(x))
        .ok_or(Error::Overflow)
}

/// Exact forward-pass costs `(input-project-first, kernel-first)`.
pub fn contraction_costs(d: &ContractionDims) -> Result<(u128, u128)> {
    d.validate()?;
    let ContractionDims { batch: b, inputs: i, outputs: j, states: n, modes: f } = *d;
    let first = add(&[mul(&[b, n, i, f])?, mul(&[b, n, f])?, mul(&[b, j, n, f])?])?;
    let second = add(&[mul(&[j, n, i])?, mul(&[j, n, i, f])?, mul(&[b, j, i, f])?])?;
    Ok((first, second))
}

/// `1/B + 1/N > 1/I + 1/J` evaluated exactly; ties go to input-project-first.
pub fn prefers_input_project_first(d: &ContractionDims) -> bool {
    let (b, n, i, j) = (d.batch as u128, d.states as u128, d.inputs as u128, d.outputs as u128);
    // (B + N) / BN >= (I + J) / IJ  <=>  (B + N) IJ >= (I + J) BN
    (b + n) * i * j >= (i + j) * b * n
}

pub fn plan_contraction(d: &ContractionDims) -> Result<ContractionOrder> {
    let (first, second) = contraction_costs(d)?;
    Ok(if prefers_input_project_first(d) {
        ContractionOrder { variant: Variant::InputProjectFirst, cost: first }
    } else {
        ContractionOrder { variant: Variant::KernelFirst, cost: second }
    })
}
