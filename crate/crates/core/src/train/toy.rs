//! Desk-scale denoising run: sinusoids in white noise, reduced network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::loss::DEFAULT_BETA;
use super::optim::{AdamW, AdamWConfig};
use crate::audio::mix::{mix_at_snr, power};
use crate::error::{Error, Result};
use crate::network::{build_network, Network, NetworkConfig};

const TOY_NETWORK: &str = r#"
sample_rate = 16000
ssm_state_size = 64

[[blocks]]
stage = "encoder"
resample_factor = 4
out_channels = 8

[[blocks]]
stage = "encoder"
resample_factor = 4
out_channels = 16
has_preconv = true

[[blocks]]
stage = "neck"
out_channels = 16

[[blocks]]
stage = "decoder"
resample_factor = 4
out_channels = 8
has_preconv = true

[[blocks]]
stage = "decoder"
resample_factor = 4
out_channels = 1

[[blocks]]
stage = "output"
out_channels = 1
"#;

/// Data and schedule settings of the toy run.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub network: NetworkConfig,
    pub segment_len: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    /// Number of distinct tone frequencies, drawn once per run.
    pub tones: usize,
    pub min_freq_hz: f64,
    pub max_freq_hz: f64,
    pub snr_db: f64,
    pub min_level_db: f64,
    pub max_level_db: f64,
    pub beta: f64,
    pub optimizer: AdamWConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::from_toml(TOY_NETWORK).expect("toy config is valid"),
            segment_len: 2048,
            batch_size: 8,
            eval_batch_size: 16,
            tones: 4,
            min_freq_hz: 200.0,
            max_freq_hz: 3000.0,
            snr_db: 0.0,
            min_level_db: -35.0,
            max_level_db: -15.0,
            beta: DEFAULT_BETA,
            optimizer: AdamWConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub max_abar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyReport {
    pub tone_freqs_hz: Vec<f64>,
    pub history: Vec<StepMetrics>,
    /// SNR of the noisy held-out inputs against their targets.
    pub input_snr_db: f64,
    /// SNR of the network outputs against the same targets.
    pub output_snr_db: f64,
}

impl ToyReport {
    pub fn losses(&self) -> Vec<f64> {
        self.history.iter().map(|m| m.loss).collect()
    }

    pub fn snr_gain_db(&self) -> f64 {
        self.output_snr_db - self.input_snr_db
    }
}

/// One noisy/clean pair. The target is the clean signal scaled by the same
/// gain that leveled the mixture.
#[derive(Debug, Clone)]
struct Example {
    input: Vec<f64>,
    target: Vec<f64>,
}

fn make_example(cfg: &ToyConfig, tones: &[f64], rng: &mut ChaCha8Rng) -> Result<Example> {
    let rate = cfg.network.sample_rate as f64;
    let parts: Vec<(f64, f64, f64)> = tones
        .iter()
        .map(|&f| {
            let amp = rng.random_range(0.2..1.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (f, amp, phase)
        })
        .collect();
    let clean: Vec<f64> = (0..cfg.segment_len)
        .map(|t| {
            parts
                .iter()
                .map(|&(f, a, p)| a * (std::f64::consts::TAU * f * t as f64 / rate + p).sin())
                .sum()
        })
        .collect();
    let noise: Vec<f64> = (0..cfg.segment_len).map(|_| StandardNormal.sample(rng)).collect();
    let level = rng.random_range(cfg.min_level_db..cfg.max_level_db);
    let mix = mix_at_snr(&clean, &noise, cfg.snr_db, level, rng.random())?;
    let target = clean.iter().map(|c| c * mix.output_gain).collect();
    Ok(Example { input: mix.samples, target })
}

fn make_batch(cfg: &ToyConfig, tones: &[f64], size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Example>> {
    (0..size).map(|_| make_example(cfg, tones, rng)).collect()
}

fn add_into(acc: &mut Network, g: &Network, scale: f64) {
    for ((_, a), (_, b)) in acc.tensors_mut().into_iter().zip(g.tensors()) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += scale * y;
        }
    }
}

/// Pooled SNR of `outputs` against `targets` in dB.
pub fn pooled_snr_db(outputs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    let mut sig = 0.0;
    let mut err = 0.0;
    for (o, t) in outputs.iter().zip(targets) {
        sig += power(t) * t.len() as f64;
        err += o.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    10.0 * (sig / err).log10()
}

pub fn toy_network_config() -> NetworkConfig {
    ToyConfig::default().network
}

/// Trains the default toy setup for `steps` steps.
pub fn train_toy(steps: usize, seed: u64) -> Result<(Network, ToyReport)> {
    train_toy_with(&ToyConfig::default(), steps, seed, |_| {})
}

/// Trains with an explicit setup, calling `on_step` after every update.
pub fn train_toy_with(
    cfg: &ToyConfig,
    steps: usize,
    seed: u64,
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<(Network, ToyReport)> {
    if steps == 0 {
        return Err(Error::InvalidParameter("steps must be at least 1".into()));
    }
    if !cfg.segment_len.is_multiple_of(cfg.network.total_factor()) {
        return Err(Error::Alignment { len: cfg.segment_len, factor: cfg.network.total_factor() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tones: Vec<f64> = (0..cfg.tones).map(|_| rng.random_range(cfg.min_freq_hz..cfg.max_freq_hz)).collect();
    let mut net = build_network(&cfg.network, rng.random())?;
    let mut eval_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let eval = make_batch(cfg, &tones, cfg.eval_batch_size, &mut eval_rng)?;
    let mut opt = AdamW::new(&net, cfg.optimizer, steps);
    let mut history = Vec::with_capacity(steps);

    for step in 0..steps {
        let batch = make_batch(cfg, &tones, cfg.batch_size, &mut rng)?;
        let results: Vec<Result<(f64, Network)>> = batch
            .par_iter()
            .map(|ex| net.loss_and_grad(&ex.input, &ex.target, cfg.beta))
            .collect();
        let mut grad = net.zeroed();
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for r in results {
            let (l, g) = r?;
            loss += l * scale;
            add_into(&mut grad, &g, scale);
        }
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        let info = opt.step(&mut net, &grad);
        let metrics = StepMetrics {
            step,
            loss,
            lr: info.lr,
            grad_norm: info.grad_norm,
            max_abar: net.max_abar_modulus(),
        };
        on_step(&metrics);
        history.push(metrics);
    }

    let outputs: Vec<Vec<f64>> = eval
        .par_iter()
        .map(|ex| net.forward_batch(&ex.input))
        .collect::<Result<_>>()?;
    let inputs: Vec<Vec<f64>> = eval.iter().map(|ex| ex.input.clone()).collect();
    let targets: Vec<Vec<f64>> = eval.iter().map(|ex| ex.target.clone()).collect();
    let report = ToyReport {
        tone_freqs_hz: tones,
        history,
        input_snr_db: pooled_snr_db(&inputs, &targets),
        output_snr_db: pooled_snr_db(&outputs, &targets),
    };
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ToyConfig {
        ToyConfig { segment_len: 256, batch_size: 2, eval_batch_size: 2, ..ToyConfig::default() }
    }

    #[test]
    fn rejects_zero_steps() {
        assert!(train_toy(0, 0).is_err());
    }

    #[test]
    fn short_run_is_finite_and_deterministic() {
        let (_, a) = train_toy_with(&small(), 3, 7, |_| {}).unwrap();
        let (_, b) = train_toy_with(&small(), 3, 7, |_| {}).unwrap();
        assert_eq!(a.history.len(), 3);
        assert!(a.history.iter().all(|m| m.loss.is_finite() && m.max_abar < 1.0));
        assert_eq!(a.losses(), b.losses());
        assert!(a.input_snr_db.abs() < 0.5);
    }
}
