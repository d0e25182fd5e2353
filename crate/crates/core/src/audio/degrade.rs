//! Bandwidth and bit-depth degradation of 16 kHz speech.

use std::f64::consts::PI;

use super::mulaw::{mulaw_degrade, DEFAULT_MU};
use super::AudioBuffer;
use crate::error::{Error, Result};

pub const WORKING_RATE: u32 = 16000;

/// Anti-alias cutoff as a fraction of the target Nyquist frequency.
pub const ANTI_ALIAS_CUTOFF: f64 = 0.45;

/// Half-width of the windowed-sinc low-pass, in taps.
const FIR_HALF_WIDTH: usize = 31;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradeSpec {
    pub target_rate: u32,
    pub bits: u32,
    pub mu: f64,
}

impl DegradeSpec {
    pub fn new(target_rate: u32, bits: u32) -> Result<Self> {
        let spec = Self { target_rate, bits, mu: DEFAULT_MU };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_rate == 0 {
            return Err(Error::InvalidParameter("target rate must be positive".into()));
        }
        if ![4000, 8000, 16000].contains(&self.target_rate) {
            return Err(Error::UnsupportedFactor(WORKING_RATE as f64 / self.target_rate as f64));
        }
        if ![4, 8, 16].contains(&self.bits) {
            return Err(Error::InvalidParameter(format!("bit width {} not in {{4, 8, 16}}", self.bits)));
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::InvalidParameter(format!("mu-law constant {} must be positive", self.mu)));
        }
        Ok(())
    }

    pub fn factor(&self) -> usize {
        (WORKING_RATE / self.target_rate) as usize
    }
}

/// Hamming-windowed sinc low-pass with unit DC gain; `cutoff` in cycles per sample.
fn lowpass_taps(cutoff: f64) -> Vec<f64> {
    let m = FIR_HALF_WIDTH as f64;
    let mut taps: Vec<f64> = (0..=2 * FIR_HALF_WIDTH)
        .map(|k| {
            let x = k as f64 - m;
            let sinc = if x == 0.0 { 2.0 * cutoff } else { (2.0 * PI * cutoff * x).sin() / (PI * x) };
            let window = 0.54 + 0.46 * (PI * x / m).cos();
            sinc * window
        })
        .collect();
    let dc: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= dc);
    taps
}

/// Centered (zero-phase) FIR filtering with zero padding at both ends.
fn filter_centered(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let half = taps.len() / 2;
    (0..x.len())
        .map(|t| {
            taps.iter()
                .enumerate()
                .filter_map(|(k, &w)| (t + k).checked_sub(half).and_then(|i| x.get(i)).map(|&v| w * v))
                .sum()
        })
        .collect()
}

/// Keeps every `factor`-th sample and repeats it `factor` times, optionally
/// after a linear-phase low-pass at 0.45 of the target Nyquist frequency.
pub fn downsample_and_repeat(buffer: &AudioBuffer, factor: usize, anti_alias: bool) -> Result<AudioBuffer> {
    if ![1, 2, 4].contains(&factor) {
        return Err(Error::UnsupportedFactor(factor as f64));
    }
    if buffer.sample_rate != WORKING_RATE {
        return Err(Error::InvalidParameter(format!(
            "expected {WORKING_RATE} Hz input, got {} Hz",
            buffer.sample_rate
        )));
    }
    if factor == 1 {
        return Ok(buffer.clone());
    }
    let filtered = if anti_alias {
        filter_centered(&buffer.samples, &lowpass_taps(ANTI_ALIAS_CUTOFF / (2.0 * factor as f64)))
    } else {
        buffer.samples.clone()
    };
    let samples = (0..filtered.len())
        .map(|t| filtered[t - t % factor].clamp(-1.0, 1.0))
        .collect();
    Ok(AudioBuffer { sample_rate: WORKING_RATE, samples })
}

/// Downsampling then mu-law quantization. A 16-bit target keeps the working
/// resolution and skips companding.
pub fn degrade(buffer: &AudioBuffer, spec: &DegradeSpec, anti_alias: bool) -> Result<AudioBuffer> {
    spec.validate()?;
    let down = downsample_and_repeat(buffer, spec.factor(), anti_alias)?;
    if spec.bits == 16 {
        return Ok(down);
    }
    mulaw_degrade(&down, spec.bits, spec.mu)
}
