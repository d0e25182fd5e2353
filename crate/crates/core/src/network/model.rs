use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{BlockLayout, NetworkConfig, Stage};
use super::layers::{activate, downsample, upsample, Norm, NormCache, PreConv, Projection};
use crate::error::{Error, Result};
use crate::exec::fft::{fft_convolve, planned_variant};
use crate::ssm::{discretize_zoh, init_ssm, ContinuousSsm, DiscreteSsm};

const PRECONV_NOISE_STD: f64 = 0.01;

/// One block's weights.
///
/// The block body is `u + act(ssm(norm(preconv(u))))`. Encoder blocks run the
/// body and then downsample; decoder blocks upsample, add the skip from their
/// encoder partner and then run the body. Normalization is omitted in
/// single-channel blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub layout: BlockLayout,
    pub preconv: Option<PreConv>,
    pub norm: Option<Norm>,
    pub ssm: ContinuousSsm,
    /// Down-projection after an encoder body or up-projection before a decoder body.
    pub resample: Option<Projection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub blocks: Vec<Block>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    /// Projection and PreConv weights, SSM `B` and `C`.
    Weight,
    Bias,
    NormAffine,
    /// `a_r` and `a_im`.
    SsmEigen,
    SsmTimestep,
    /// Non-learnable state such as BatchNorm running statistics.
    Buffer,
}

impl TensorRole {
    pub fn learnable(self) -> bool {
        self != TensorRole::Buffer
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorMeta {
    pub name: String,
    pub dims: Vec<usize>,
    pub role: TensorRole,
}

impl TensorMeta {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

fn kaiming(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, (2.0 / cols as f64).sqrt()).expect("finite std");
    Array2::from_shape_fn((rows, cols), |_| normal.sample(rng))
}

/// Builds a freshly initialized network. Deterministic for a fixed seed.
pub fn build_network(cfg: &NetworkConfig, seed: u64) -> Result<Network> {
    let layouts = cfg.layout()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = cfg.ssm_state_size;
    let mut blocks = Vec::with_capacity(layouts.len());
    for layout in layouts {
        let ch = layout.ssm_channels;
        let ssm = init_ssm(ch, ch, h, rng.random())?;
        let preconv = layout.has_preconv.then(|| {
            let noise = Normal::new(0.0, PRECONV_NOISE_STD).expect("finite std");
            let mut pc = PreConv::identity(ch);
            pc.kernel.mapv_inplace(|w| w + noise.sample(&mut rng));
            pc
        });
        let norm = (ch > 1).then(|| Norm::new(layout.norm, ch));
        let resample = match layout.stage {
            Stage::Encoder => {
                let inp = layout.in_channels * layout.factor;
                Some(Projection::new(kaiming(layout.out_channels, inp, &mut rng), Array1::zeros(layout.out_channels)))
            }
            Stage::Decoder => {
                let inp = layout.in_channels / layout.factor;
                Some(Projection::new(kaiming(layout.out_channels, inp, &mut rng), Array1::zeros(layout.out_channels)))
            }
            Stage::Neck | Stage::Output => None,
        };
        blocks.push(Block { layout, preconv, norm, ssm, resample });
    }
    Ok(Network { config: cfg.clone(), blocks })
}

/// Forward quantities of one block body kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct BodyTape {
    pub input: Array2<f64>,
    pub norm_cache: Option<NormCache>,
    pub ssm_input: Array2<f64>,
    pub ssm_output: Array2<f64>,
    pub discrete: DiscreteSsm,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockTape {
    pub body: BodyTape,
    /// Encoder: the body output fed to the down-projection.
    /// Decoder: the previous block's output fed to the up-projection.
    pub resample_input: Option<Array2<f64>>,
}

impl Block {
    fn body(&self, u: ArrayView2<f64>, record: bool) -> Result<(Array2<f64>, Option<BodyTape>)> {
        let p = match &self.preconv {
            Some(pc) => pc.apply(u)?,
            None => u.to_owned(),
        };
        let (q, norm_cache) = match &self.norm {
            Some(norm) => {
                let (q, cache) = norm.forward(p.view());
                (q, Some(cache))
            }
            None => (p, None),
        };
        let discrete = discretize_zoh(&self.ssm);
        let variant = planned_variant(&discrete, q.ncols());
        let s = fft_convolve(q.view(), &discrete, variant)?;
        let act = self.layout.activation;
        let out = &u + &s.mapv(|v| activate(act, v));
        let tape = record.then(|| BodyTape {
            input: u.to_owned(),
            norm_cache,
            ssm_input: q,
            ssm_output: s,
            discrete,
        });
        Ok((out, tape))
    }
}

impl Network {
    pub fn total_factor(&self) -> usize {
        self.config.total_factor()
    }

    /// Offline forward pass over a whole signal using FFT convolutions.
    pub fn forward_batch(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.run(input, false)?.0)
    }

    pub(crate) fn run(&self, input: &[f64], record: bool) -> Result<(Vec<f64>, Vec<BlockTape>)> {
        let len = input.len();
        let factor = self.total_factor();
        if len == 0 || !len.is_multiple_of(factor) {
            return Err(Error::Alignment { len, factor });
        }
        let mut x = Array2::from_shape_vec((1, len), input.to_vec()).expect("shape");
        let mut skips: Vec<Option<Array2<f64>>> = vec![None; self.blocks.len()];
        let mut tapes = Vec::new();
        for (k, block) in self.blocks.iter().enumerate() {
            let layout = &block.layout;
            match layout.stage {
                Stage::Encoder => {
                    let (h, body) = block.body(x.view(), record)?;
                    let proj = block.resample.as_ref().expect("encoder projection");
                    x = downsample(h.view(), layout.factor, proj)?;
                    if let Some(body) = body {
                        tapes.push(BlockTape { body, resample_input: Some(h.clone()) });
                    }
                    skips[k] = Some(h);
                }
                Stage::Decoder => {
                    let proj = block.resample.as_ref().expect("decoder projection");
                    let partner = layout.skip_from.expect("decoder partner");
                    let mut u = upsample(x.view(), layout.factor, proj)?;
                    u += skips[partner].as_ref().expect("encoder ran first");
                    let (h, body) = block.body(u.view(), record)?;
                    if let Some(body) = body {
                        tapes.push(BlockTape { body, resample_input: Some(x) });
                    }
                    x = h;
                }
                Stage::Neck | Stage::Output => {
                    let (h, body) = block.body(x.view(), record)?;
                    if let Some(body) = body {
                        tapes.push(BlockTape { body, resample_input: None });
                    }
                    x = h;
                }
            }
        }
        Ok((x.row(0).to_vec(), tapes))
    }

    /// Every tensor in a fixed order, with its name, shape and role.
    pub fn tensors(&self) -> Vec<(TensorMeta, &[f64])> {
        let mut out = Vec::new();
        for (k, b) in self.blocks.iter().enumerate() {
            let meta = |field: &str, dims: Vec<usize>, role| TensorMeta {
                name: format!("blocks.{k}.{field}"),
                dims,
                role,
            };
            if let Some(pc) = &b.preconv {
                out.push((meta("preconv.weight", pc.kernel.shape().to_vec(), TensorRole::Weight), slice(&pc.kernel)));
                out.push((meta("preconv.bias", vec![pc.bias.len()], TensorRole::Bias), slice1(&pc.bias)));
            }
            if let Some(norm) = &b.norm {
                let c = norm.weight.len();
                out.push((meta("norm.weight", vec![c], TensorRole::NormAffine), slice1(&norm.weight)));
                out.push((meta("norm.bias", vec![c], TensorRole::NormAffine), slice1(&norm.bias)));
                if norm.kind == super::config::NormKind::Batch {
                    out.push((meta("norm.running_mean", vec![c], TensorRole::Buffer), slice1(&norm.running_mean)));
                    out.push((meta("norm.running_var", vec![c], TensorRole::Buffer), slice1(&norm.running_var)));
                }
            }
            let s = &b.ssm;
            out.push((meta("ssm.a_r", vec![s.h], TensorRole::SsmEigen), &s.a_r[..]));
            out.push((meta("ssm.a_im", vec![s.h], TensorRole::SsmEigen), &s.a_im[..]));
            out.push((meta("ssm.B", vec![s.h, s.n], TensorRole::Weight), &s.b[..]));
            out.push((meta("ssm.C", vec![s.m, s.h], TensorRole::Weight), &s.c[..]));
            out.push((meta("ssm.delta", vec![s.h], TensorRole::SsmTimestep), &s.delta[..]));
            if let Some(p) = &b.resample {
                out.push((meta("proj.weight", p.weight.shape().to_vec(), TensorRole::Weight), slice(&p.weight)));
                out.push((meta("proj.bias", vec![p.bias.len()], TensorRole::Bias), slice1(&p.bias)));
            }
        }
        out
    }

    /// Mutable view of [`Network::tensors`], in the same order.
    pub fn tensors_mut(&mut self) -> Vec<(TensorMeta, &mut [f64])> {
        let mut out = Vec::new();
        for (k, b) in self.blocks.iter_mut().enumerate() {
            let meta = |field: &str, dims: Vec<usize>, role| TensorMeta {
                name: format!("blocks.{k}.{field}"),
                dims,
                role,
            };
            let Block { preconv, norm, ssm, resample, .. } = b;
            if let Some(pc) = preconv {
                let dims = pc.kernel.shape().to_vec();
                let c = pc.bias.len();
                out.push((meta("preconv.weight", dims, TensorRole::Weight), slice_mut(&mut pc.kernel)));
                out.push((meta("preconv.bias", vec![c], TensorRole::Bias), slice1_mut(&mut pc.bias)));
            }
            if let Some(norm) = norm {
                let c = norm.weight.len();
                let batch = norm.kind == super::config::NormKind::Batch;
                let Norm { weight, bias, running_mean, running_var, .. } = norm;
                out.push((meta("norm.weight", vec![c], TensorRole::NormAffine), slice1_mut(weight)));
                out.push((meta("norm.bias", vec![c], TensorRole::NormAffine), slice1_mut(bias)));
                if batch {
                    out.push((meta("norm.running_mean", vec![c], TensorRole::Buffer), slice1_mut(running_mean)));
                    out.push((meta("norm.running_var", vec![c], TensorRole::Buffer), slice1_mut(running_var)));
                }
            }
            let (h, n, m) = (ssm.h, ssm.n, ssm.m);
            let ContinuousSsm { a_r, a_im, b: bm, c: cm, delta, .. } = ssm;
            out.push((meta("ssm.a_r", vec![h], TensorRole::SsmEigen), &mut a_r[..]));
            out.push((meta("ssm.a_im", vec![h], TensorRole::SsmEigen), &mut a_im[..]));
            out.push((meta("ssm.B", vec![h, n], TensorRole::Weight), &mut bm[..]));
            out.push((meta("ssm.C", vec![m, h], TensorRole::Weight), &mut cm[..]));
            out.push((meta("ssm.delta", vec![h], TensorRole::SsmTimestep), &mut delta[..]));
            if let Some(p) = resample {
                let dims = p.weight.shape().to_vec();
                let c = p.bias.len();
                out.push((meta("proj.weight", dims, TensorRole::Weight), slice_mut(&mut p.weight)));
                out.push((meta("proj.bias", vec![c], TensorRole::Bias), slice1_mut(&mut p.bias)));
            }
        }
        out
    }

    /// Same structure with every tensor set to zero; used to accumulate gradients.
    pub fn zeroed(&self) -> Network {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn discretized(&self) -> Vec<DiscreteSsm> {
        self.blocks.iter().map(|b| discretize_zoh(&b.ssm)).collect()
    }

    /// Largest `|abar|` over every SSM layer.
    pub fn max_abar_modulus(&self) -> f64 {
        self.discretized().iter().map(|d| d.max_abar_modulus()).fold(0.0, f64::max)
    }
}

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

fn slice1_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> NetworkConfig {
        NetworkConfig::from_toml(
            r#"
            sample_rate = 16000
            ssm_state_size = 4
            [[blocks]]
            stage = "encoder"
            resample_factor = 2
            out_channels = 4
            [[blocks]]
            stage = "encoder"
            resample_factor = 2
            out_channels = 4
            has_preconv = true
            [[blocks]]
            stage = "neck"
            out_channels = 4
            [[blocks]]
            stage = "decoder"
            resample_factor = 2
            out_channels = 4
            has_preconv = true
            [[blocks]]
            stage = "decoder"
            resample_factor = 2
            out_channels = 1
            [[blocks]]
            stage = "output"
            out_channels = 1
            "#,
        )
        .unwrap()
    }

    #[test]
    fn default_layer_counts() {
        let net = build_network(&NetworkConfig::default(), 0).unwrap();
        assert_eq!(net.blocks.len(), 16);
        assert_eq!(net.blocks.iter().filter(|b| b.preconv.is_some()).count(), 10);
        let no_pc = build_network(&NetworkConfig::default().without_preconv(), 0).unwrap();
        assert_eq!(no_pc.blocks.iter().filter(|b| b.preconv.is_some()).count(), 0);
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = tiny_config();
        assert_eq!(build_network(&cfg, 11).unwrap(), build_network(&cfg, 11).unwrap());
        assert_ne!(build_network(&cfg, 11).unwrap(), build_network(&cfg, 12).unwrap());
    }

    #[test]
    fn forward_preserves_length_and_checks_alignment() {
        let net = build_network(&tiny_config(), 3).unwrap();
        let x: Vec<f64> = (0..64).map(|t| (t as f64 * 0.3).sin() * 0.5).collect();
        assert_eq!(net.forward_batch(&x).unwrap().len(), 64);
        assert!(matches!(net.forward_batch(&x[..30]), Err(Error::Alignment { .. })));
    }

    #[test]
    fn tensors_mut_matches_tensors() {
        let mut net = build_network(&tiny_config().with_norm(crate::network::config::NormKind::Batch), 1).unwrap();
        let names: Vec<_> = net.tensors().into_iter().map(|(m, t)| (m, t.len())).collect();
        let names_mut: Vec<_> = net.tensors_mut().into_iter().map(|(m, t)| (m, t.len())).collect();
        assert_eq!(names, names_mut);
        for (m, len) in names {
            assert_eq!(m.numel(), len, "{}", m.name);
        }
    }
}
