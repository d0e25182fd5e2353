//! Mixing clean speech with noise at a target SNR and output level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Clean power below this is treated as silence.
pub const SILENCE_POWER: f64 = 1e-12;

pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

pub fn rms(x: &[f64]) -> f64 {
    power(x).sqrt()
}

/// `10 log10(P_signal / P_noise)`.
pub fn snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    10.0 * (power(signal) / power(noise)).log10()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    /// Leveled and hard-clipped mixture.
    pub samples: Vec<f64>,
    /// Tiled noise after SNR scaling, before leveling.
    pub scaled_noise: Vec<f64>,
    /// Factor applied to the noise to reach the requested SNR.
    pub noise_gain: f64,
    /// Factor applied to clean plus noise to reach the requested level.
    pub output_gain: f64,
    /// RMS of the leveled mixture before clipping.
    pub leveled_rms: f64,
    /// Samples changed by clipping.
    pub clipped: usize,
}

/// Tiles the noise from a seed-dependent offset to the clean length, scales it
/// to `snr_db`, rescales the sum to an RMS of `level_db` dBFS and hard-clips.
pub fn mix_at_snr(clean: &[f64], noise: &[f64], snr_db: f64, level_db: f64, seed: u64) -> Result<Mixture> {
    let p_clean = power(clean);
    if p_clean < SILENCE_POWER {
        return Err(Error::SilentClean(p_clean));
    }
    if noise.is_empty() {
        return Err(Error::SilentNoise);
    }
    let offset = ChaCha8Rng::seed_from_u64(seed).random_range(0..noise.len());
    let tiled: Vec<f64> = (0..clean.len()).map(|t| noise[(offset + t) % noise.len()]).collect();
    let p_noise = power(&tiled);
    if p_noise == 0.0 {
        return Err(Error::SilentNoise);
    }
    let noise_gain = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled_noise: Vec<f64> = tiled.iter().map(|v| v * noise_gain).collect();
    let sum: Vec<f64> = clean.iter().zip(&scaled_noise).map(|(c, n)| c + n).collect();
    let sum_rms = rms(&sum);
    if sum_rms == 0.0 {
        return Err(Error::InvalidParameter("noise cancels the clean signal exactly".into()));
    }
    let output_gain = 10f64.powf(level_db / 20.0) / sum_rms;
    let leveled: Vec<f64> = sum.iter().map(|v| v * output_gain).collect();
    let leveled_rms = rms(&leveled);
    let clipped = leveled.iter().filter(|v| v.abs() > 1.0).count();
    let samples = leveled.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    Ok(Mixture { samples, scaled_noise, noise_gain, output_gain, leveled_rms, clipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(len: usize, amp: f64, w: f64) -> Vec<f64> {
        (0..len).map(|t| amp * (w * t as f64).sin()).collect()
    }

    #[test]
    fn equal_power_at_zero_db_keeps_noise() {
        let c = vec![0.3; 1000];
        let n: Vec<f64> = (0..1000).map(|t| if t % 2 == 0 { 0.3 } else { -0.3 }).collect();
        let m = mix_at_snr(&c, &n, 0.0, -25.0, 0).unwrap();
        assert!((m.noise_gain - 1.0).abs() < 1e-12);
    }

    #[test]
    fn level_and_snr() {
        let c = tone(4000, 0.1, 0.05);
        let n: Vec<f64> = (0..3000).map(|t| ((t * 7919) % 101) as f64 / 101.0 - 0.5).collect();
        let m = mix_at_snr(&c, &n, 20.0, -25.0, 3).unwrap();
        assert!((snr_db(&c, &m.scaled_noise) - 20.0).abs() < 1e-9);
        assert!((m.leveled_rms - 10f64.powf(-1.25)).abs() < 1e-12);
        assert_eq!(m.clipped, 0);
    }

    #[test]
    fn silent_inputs() {
        assert!(matches!(mix_at_snr(&[0.0; 10], &[0.1; 10], 0.0, -20.0, 0), Err(Error::SilentClean(_))));
        assert!(matches!(mix_at_snr(&[0.1; 10], &[0.0; 10], 0.0, -20.0, 0), Err(Error::SilentNoise)));
    }
}
