//! Mu-law companding followed by a symmetric midtread quantizer.

use super::AudioBuffer;
use crate::error::{Error, Result};

pub const DEFAULT_MU: f64 = 255.0;

fn compand(x: f64, ln_mu1: f64, mu: f64) -> f64 {
    x.signum() * (mu * x.abs()).ln_1p() / ln_mu1
}

fn expand(y: f64, mu: f64) -> f64 {
    // `powf` keeps the endpoint exact: (1 + mu)^1 - 1 == mu.
    y.signum() * ((1.0 + mu).powf(y.abs()) - 1.0) / mu
}

fn check_bits(bits: u32, mu: f64) -> Result<()> {
    if !(2..=16).contains(&bits) {
        return Err(Error::InvalidParameter(format!("mu-law bit width {bits} outside 2..=16")));
    }
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::InvalidParameter(format!("mu-law constant {mu} must be positive")));
    }
    Ok(())
}

/// One sample through compand, quantize to `2^bits - 1` levels on `[-1, 1]`, expand.
/// Inputs are clamped to `[-1, 1]` first.
pub fn mulaw_degrade_sample(x: f64, bits: u32, mu: f64) -> Result<f64> {
    check_bits(bits, mu)?;
    Ok(degrade_one(x, (1u32 << (bits - 1)) as f64 - 1.0, mu.ln_1p(), mu))
}

fn degrade_one(x: f64, q: f64, ln_mu1: f64, mu: f64) -> f64 {
    let y = compand(x.clamp(-1.0, 1.0), ln_mu1, mu);
    // f64::round rounds half away from zero, which keeps the quantizer odd.
    let level = (y * q).round() / q;
    expand(level, mu).clamp(-1.0, 1.0)
}

pub fn mulaw_degrade(buffer: &AudioBuffer, bits: u32, mu: f64) -> Result<AudioBuffer> {
    check_bits(bits, mu)?;
    let q = (1u32 << (bits - 1)) as f64 - 1.0;
    let ln_mu1 = mu.ln_1p();
    Ok(AudioBuffer {
        sample_rate: buffer.sample_rate,
        samples: buffer.samples.iter().map(|&x| degrade_one(x, q, ln_mu1, mu)).collect(),
    })
}
