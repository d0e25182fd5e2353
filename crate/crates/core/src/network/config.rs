//! Block-structured description of the hourglass network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_CONFIG: &str = include_str!("../../configs/default_network.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Encoder,
    Neck,
    Decoder,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[default]
    Layer,
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Silu,
    Relu,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub stage: Stage,
    #[serde(default = "one")]
    pub resample_factor: usize,
    pub out_channels: usize,
    #[serde(default)]
    pub has_preconv: bool,
    #[serde(default)]
    pub norm: NormKind,
    #[serde(default)]
    pub activation: Activation,
}

fn default_state_size() -> usize {
    256
}

/// Network description. Encoder block `i` feeds an additive skip into decoder
/// block `E - 1 - i` (`E` encoder blocks), so the pairing is implied by order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub sample_rate: u32,
    #[serde(default = "default_state_size")]
    pub ssm_state_size: usize,
    pub blocks: Vec<BlockSpec>,
}

/// Derived per-block shapes and rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub stage: Stage,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Channel count the PreConv, norm and SSM of this block operate on.
    pub ssm_channels: usize,
    pub factor: usize,
    /// Input samples per frame where the block body runs.
    pub period: usize,
    pub has_preconv: bool,
    pub norm: NormKind,
    pub activation: Activation,
    /// For decoder blocks, the encoder block whose features are added after upsampling.
    pub skip_from: Option<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::from_toml(DEFAULT_CONFIG).expect("embedded default config is valid")
    }
}

impl NetworkConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: NetworkConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Same network with every PreConv removed.
    pub fn without_preconv(mut self) -> Self {
        for b in &mut self.blocks {
            b.has_preconv = false;
        }
        self
    }

    /// Same network with PreConvs kept only in the encoder.
    pub fn encoder_preconv_only(mut self) -> Self {
        for b in &mut self.blocks {
            if b.stage != Stage::Encoder {
                b.has_preconv = false;
            }
        }
        self
    }

    pub fn with_norm(mut self, norm: NormKind) -> Self {
        for b in &mut self.blocks {
            b.norm = norm;
        }
        self
    }

    pub fn with_activation(mut self, act: Activation) -> Self {
        for b in &mut self.blocks {
            b.activation = act;
        }
        self
    }

    /// Product of the encoder resampling factors.
    pub fn total_factor(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.stage == Stage::Encoder)
            .map(|b| b.resample_factor)
            .product()
    }

    pub fn validate(&self) -> Result<()> {
        self.layout().map(|_| ())
    }

    pub fn layout(&self) -> Result<Vec<BlockLayout>> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if self.ssm_state_size == 0 {
            return bad("ssm_state_size must be positive".into());
        }
        if self.blocks.is_empty() {
            return bad("no blocks".into());
        }
        let rank = |s: Stage| match s {
            Stage::Encoder => 0,
            Stage::Neck => 1,
            Stage::Decoder => 2,
            Stage::Output => 3,
        };
        if self.blocks.windows(2).any(|w| rank(w[0].stage) > rank(w[1].stage)) {
            return bad("blocks must be ordered encoder, neck, decoder, output".into());
        }
        let n_enc = self.blocks.iter().filter(|b| b.stage == Stage::Encoder).count();
        let n_dec = self.blocks.iter().filter(|b| b.stage == Stage::Decoder).count();
        if n_enc != n_dec {
            return bad(format!("{n_enc} encoder blocks but {n_dec} decoder blocks"));
        }
        let enc_prod: usize = self.total_factor();
        let dec_prod: usize = self
            .blocks
            .iter()
            .filter(|b| b.stage == Stage::Decoder)
            .map(|b| b.resample_factor)
            .product();
        if enc_prod != dec_prod {
            return bad(format!("encoder factor product {enc_prod} != decoder factor product {dec_prod}"));
        }

        let mut layouts: Vec<BlockLayout> = Vec::with_capacity(self.blocks.len());
        let mut channels = 1usize;
        let mut period = 1usize;
        let mut dec_seen = 0usize;
        for (k, b) in self.blocks.iter().enumerate() {
            let r = b.resample_factor;
            if r == 0 || b.out_channels == 0 {
                return bad(format!("block {k}: factor and channels must be positive"));
            }
            let in_ch = channels;
            let (ssm_ch, body_period, skip_from) = match b.stage {
                Stage::Encoder => (in_ch, period, None),
                Stage::Neck | Stage::Output => {
                    if r != 1 || b.out_channels != in_ch {
                        return bad(format!(
                            "block {k}: {:?} blocks keep shape (factor 1, {in_ch} channels)",
                            b.stage
                        ));
                    }
                    (in_ch, period, None)
                }
                Stage::Decoder => {
                    if !in_ch.is_multiple_of(r) {
                        return bad(format!("block {k}: {in_ch} channels not divisible by factor {r}"));
                    }
                    if !period.is_multiple_of(r) {
                        return bad(format!("block {k}: upsampling by {r} past the input rate"));
                    }
                    let partner = n_enc - 1 - dec_seen;
                    dec_seen += 1;
                    (b.out_channels, period / r, Some(partner))
                }
            };
            if b.has_preconv && (ssm_ch == 1 || matches!(b.stage, Stage::Neck | Stage::Output)) {
                return bad(format!(
                    "block {k}: PreConv is not allowed in single-channel, neck or output blocks"
                ));
            }
            if let Some(p) = skip_from {
                let enc = &layouts[p];
                if enc.ssm_channels != ssm_ch || enc.period != body_period {
                    return bad(format!(
                        "block {k}: skip from encoder block {p} has {} channels at period {}, decoder has {ssm_ch} at period {body_period}",
                        enc.ssm_channels, enc.period
                    ));
                }
            }
            layouts.push(BlockLayout {
                stage: b.stage,
                in_channels: in_ch,
                out_channels: b.out_channels,
                ssm_channels: ssm_ch,
                factor: r,
                period: body_period,
                has_preconv: b.has_preconv,
                norm: b.norm,
                activation: b.activation,
                skip_from,
            });
            channels = b.out_channels;
            period = match b.stage {
                Stage::Encoder => period * r,
                _ => body_period,
            };
        }
        if channels != 1 || period != 1 {
            return bad(format!("network must end at 1 channel and the input rate, got {channels} channels at period {period}"));
        }
        Ok(layouts)
    }
}
