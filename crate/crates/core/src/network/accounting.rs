//! Theoretical latency, parameter and MAC accounting.
//!
//! Latency is the look-ahead needed to emit the output sample aligned with
//! the current input: one full resampling frame (the total encoder factor),
//! plus one frame period for every PreConv at the rate it runs at.

use num_rational::Ratio;

use super::config::{NetworkConfig, Stage};
use super::model::Network;
use crate::error::Result;

/// Exact latency in input samples and milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Latency {
    pub samples: u64,
    pub ms: Ratio<u64>,
}

impl Latency {
    pub fn ms_f64(&self) -> f64 {
        *self.ms.numer() as f64 / *self.ms.denom() as f64
    }
}

fn samples_to_ms(samples: u64, sample_rate: u32) -> Ratio<u64> {
    Ratio::new(samples * 1000, sample_rate as u64)
}

/// Look-ahead contributed by each PreConv, as `(block index, latency)`.
pub fn preconv_latencies(cfg: &NetworkConfig) -> Result<Vec<(usize, Latency)>> {
    Ok(cfg
        .layout()?
        .iter()
        .enumerate()
        .filter(|(_, l)| l.has_preconv)
        .map(|(k, l)| {
            let samples = l.period as u64;
            (k, Latency { samples, ms: samples_to_ms(samples, cfg.sample_rate) })
        })
        .collect())
}

pub fn compute_latency(cfg: &NetworkConfig) -> Result<Latency> {
    let base = cfg.total_factor() as u64;
    let extra: u64 = preconv_latencies(cfg)?.iter().map(|(_, l)| l.samples).sum();
    let samples = base + extra;
    Ok(Latency { samples, ms: samples_to_ms(samples, cfg.sample_rate) })
}

/// Number of learnable scalars.
pub fn count_params(net: &Network) -> usize {
    net.tensors()
        .iter()
        .filter(|(m, _)| m.role.learnable())
        .map(|(m, _)| m.numel())
        .sum()
}

/// Multiply-accumulates of one recurrent SSM step: input projection, complex
/// diagonal update (4 real MACs per state) and real readout.
pub fn ssm_step_macs(n: usize, m: usize, h: usize) -> u64 {
    (h * n + 4 * h + m * h) as u64
}

/// Per-block streaming cost in MACs per second.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMacs {
    pub block: usize,
    pub stage: Stage,
    pub ssm: f64,
    pub preconv: f64,
    pub norm: f64,
    pub activation: f64,
    pub projection: f64,
}

impl BlockMacs {
    pub fn total(&self) -> f64 {
        self.ssm + self.preconv + self.norm + self.activation + self.projection
    }
}

pub fn macs_breakdown(cfg: &NetworkConfig, sample_rate: f64) -> Result<Vec<BlockMacs>> {
    let h = cfg.ssm_state_size;
    Ok(cfg
        .layout()?
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let ch = l.ssm_channels;
            let rate = sample_rate / l.period as f64;
            let projection = match l.stage {
                Stage::Encoder => {
                    let out_rate = rate / l.factor as f64;
                    (l.in_channels * l.factor * l.out_channels) as f64 * out_rate
                }
                Stage::Decoder => ((l.in_channels / l.factor) * l.out_channels) as f64 * rate,
                Stage::Neck | Stage::Output => 0.0,
            };
            BlockMacs {
                block: k,
                stage: l.stage,
                ssm: ssm_step_macs(ch, ch, h) as f64 * rate,
                preconv: if l.has_preconv { 3.0 * ch as f64 * rate } else { 0.0 },
                norm: if ch > 1 { ch as f64 * rate } else { 0.0 },
                activation: ch as f64 * rate,
                projection,
            }
        })
        .collect())
}

/// Streaming multiply-accumulates per second of audio at `sample_rate`.
pub fn count_macs(net: &Network, sample_rate: f64) -> f64 {
    macs_breakdown(&net.config, sample_rate)
        .expect("built network has a valid config")
        .iter()
        .map(BlockMacs::total)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::model::build_network;

    #[test]
    fn single_channel_ssm_step() {
        let rate = 16000.0;
        let macs = ssm_step_macs(1, 1, 256) as f64 * rate;
        assert_eq!(macs, 16000.0 * (256.0 + 1024.0 + 256.0));
        assert!((macs - 24.6e6).abs() < 0.1e6);
    }

    #[test]
    fn macs_linear_in_rate() {
        let net = build_network(&NetworkConfig::default(), 0).unwrap();
        let full = count_macs(&net, 16000.0);
        let half = count_macs(&net, 8000.0);
        assert!((full - 2.0 * half).abs() < 1e-6 * full);
    }

    #[test]
    fn ssm_params_linear_in_state_size() {
        let ssm = crate::ssm::init_ssm(1, 1, 256, 0).unwrap();
        assert_eq!(ssm.param_count(), 1280);
        let wide = crate::ssm::init_ssm(3, 5, 512, 0).unwrap();
        let narrow = crate::ssm::init_ssm(3, 5, 256, 0).unwrap();
        assert_eq!(wide.param_count(), 2 * narrow.param_count());
    }

    #[test]
    fn latency_variants() {
        let cfg = NetworkConfig::default();
        assert_eq!(compute_latency(&cfg).unwrap().ms, Ratio::new(93, 2));
        assert_eq!(compute_latency(&cfg.clone().encoder_preconv_only()).unwrap().ms, Ratio::new(125, 4));
        assert_eq!(compute_latency(&cfg.without_preconv()).unwrap().ms, Ratio::from_integer(16));
    }
}
