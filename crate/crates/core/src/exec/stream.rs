//! Chunked streaming execution of a whole network.
//!
//! Every block runs frame by frame at its own rate. A PreConv emits frame `k`
//! once frame `k + 1` has arrived, an encoder projection emits once `r` body
//! frames are buffered, and a decoder projection turns one frame into `r`.
//! Skip features wait in per-encoder FIFOs until their decoder partner reaches
//! the same frame. The resulting output is pushed through a FIFO pre-filled
//! with the network latency, so each call returns exactly as many samples as
//! it consumed and output sample `t` corresponds to batch output `t - latency`.

use std::collections::VecDeque;

use num_complex::Complex;

use super::recurrent::{step_recurrent, RecurrentSsm};
use crate::error::{Error, Result};
use crate::network::config::{Activation, BlockLayout, NormKind, Stage};
use crate::network::layers::NORM_EPS;
use crate::network::{compute_latency, Network};
use crate::scalar::Real;
use crate::ssm::discretize_zoh;

#[derive(Debug, Clone)]
struct StreamProjection<T> {
    out: usize,
    inp: usize,
    weight: Vec<T>,
    bias: Vec<T>,
}

impl<T: Real> StreamProjection<T> {
    fn apply(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.inp);
        (0..self.out)
            .map(|o| {
                let row = &self.weight[o * self.inp..(o + 1) * self.inp];
                row.iter().zip(x).fold(self.bias[o], |a, (&w, &v)| a + w * v)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct StreamNorm<T> {
    kind: NormKind,
    weight: Vec<T>,
    bias: Vec<T>,
    mean: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Real> StreamNorm<T> {
    fn apply(&self, x: &mut [T]) {
        match self.kind {
            NormKind::Layer => {
                let c = T::of(x.len() as f64);
                let mean = x.iter().fold(T::zero(), |a, &v| a + v) / c;
                let var = x.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / c;
                let inv = T::one() / (var + T::of(NORM_EPS)).sqrt();
                for (i, v) in x.iter_mut().enumerate() {
                    *v = (*v - mean) * inv * self.weight[i] + self.bias[i];
                }
            }
            NormKind::Batch => {
                for (i, v) in x.iter_mut().enumerate() {
                    *v = (*v - self.mean[i]) * self.inv_std[i] * self.weight[i] + self.bias[i];
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
struct StreamBlock<T> {
    layout: BlockLayout,
    /// `C x 3` taps and per-channel bias.
    preconv: Option<(Vec<T>, Vec<T>)>,
    norm: Option<StreamNorm<T>>,
    ssm: RecurrentSsm<T>,
    projection: Option<StreamProjection<T>>,
}

fn activate<T: Real>(act: Activation, x: T) -> T {
    match act {
        Activation::Silu => x / (T::one() + (-x).exp()),
        Activation::Relu => x.max(T::zero()),
    }
}

/// A network with weights cast to the stream precision `T`.
#[derive(Debug, Clone)]
pub struct StreamingNetwork<T> {
    blocks: Vec<StreamBlock<T>>,
    total_factor: usize,
    latency_samples: usize,
}

#[derive(Debug, Clone)]
struct BlockState<T> {
    x: Vec<Complex<T>>,
    /// PreConv frame `k - 1` and frame `k`, waiting for frame `k + 1`.
    prev: Vec<T>,
    cur: Option<Vec<T>>,
    /// Encoder body frames waiting for a full resampling group.
    pending: Vec<Vec<T>>,
}

/// Per-stream mutable state; independent of chunk boundaries.
#[derive(Debug, Clone)]
pub struct StreamState<T> {
    blocks: Vec<BlockState<T>>,
    skips: Vec<VecDeque<Vec<T>>>,
    output: VecDeque<T>,
    latency_samples: usize,
}

fn cast<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::of(x)).collect()
}

impl<T: Real> StreamingNetwork<T> {
    pub fn new(net: &Network) -> Result<Self> {
        let latency = compute_latency(&net.config)?;
        let blocks = net
            .blocks
            .iter()
            .map(|b| StreamBlock {
                layout: b.layout,
                preconv: b.preconv.as_ref().map(|pc| {
                    (cast(pc.kernel.as_slice().expect("standard layout")), cast(pc.bias.as_slice().expect("standard layout")))
                }),
                norm: b.norm.as_ref().map(|n| StreamNorm {
                    kind: n.kind,
                    weight: cast(n.weight.as_slice().expect("standard layout")),
                    bias: cast(n.bias.as_slice().expect("standard layout")),
                    mean: cast(n.running_mean.as_slice().expect("standard layout")),
                    inv_std: n.running_var.iter().map(|&v| T::of(1.0 / (v + NORM_EPS).sqrt())).collect(),
                }),
                ssm: RecurrentSsm::from(&discretize_zoh(&b.ssm)),
                projection: b.resample.as_ref().map(|p| StreamProjection {
                    out: p.out_features(),
                    inp: p.in_features(),
                    weight: cast(p.weight.as_slice().expect("standard layout")),
                    bias: cast(p.bias.as_slice().expect("standard layout")),
                }),
            })
            .collect();
        Ok(Self {
            blocks,
            total_factor: net.total_factor(),
            latency_samples: latency.samples as usize,
        })
    }

    pub fn latency_samples(&self) -> usize {
        self.latency_samples
    }

    pub fn total_factor(&self) -> usize {
        self.total_factor
    }

    pub fn new_state(&self) -> StreamState<T> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| BlockState {
                x: b.ssm.zero_state(),
                prev: vec![T::zero(); b.layout.ssm_channels],
                cur: None,
                pending: Vec::new(),
            })
            .collect();
        StreamState {
            blocks,
            skips: vec![VecDeque::new(); self.blocks.len()],
            output: std::iter::repeat_n(T::zero(), self.latency_samples).collect(),
            latency_samples: self.latency_samples,
        }
    }

    fn body_push(block: &StreamBlock<T>, st: &mut BlockState<T>, u: Vec<T>) -> Option<Vec<T>> {
        let (residual, mut p) = match &block.preconv {
            None => (u.clone(), u),
            Some((kernel, bias)) => {
                let Some(cur) = st.cur.take() else {
                    st.cur = Some(u);
                    return None;
                };
                let p: Vec<T> = (0..cur.len())
                    .map(|c| kernel[3 * c] * st.prev[c] + kernel[3 * c + 1] * cur[c] + kernel[3 * c + 2] * u[c] + bias[c])
                    .collect();
                st.prev = cur.clone();
                st.cur = Some(u);
                (cur, p)
            }
        };
        if let Some(norm) = &block.norm {
            norm.apply(&mut p);
        }
        let mut y = vec![T::zero(); block.ssm.m];
        step_recurrent(&mut st.x, &block.ssm, &p, &mut y);
        let act = block.layout.activation;
        Some(residual.iter().zip(&y).map(|(&r, &s)| r + activate(act, s)).collect())
    }

    fn process_frames(&self, state: &mut StreamState<T>, mut frames: Vec<Vec<T>>) -> Vec<Vec<T>> {
        for (k, block) in self.blocks.iter().enumerate() {
            let st = &mut state.blocks[k];
            let r = block.layout.factor;
            let mut next = Vec::new();
            match block.layout.stage {
                Stage::Encoder => {
                    let proj = block.projection.as_ref().expect("encoder projection");
                    for u in frames {
                        let Some(h) = Self::body_push(block, st, u) else { continue };
                        state.skips[k].push_back(h.clone());
                        st.pending.push(h);
                        if st.pending.len() == r {
                            let c = st.pending[0].len();
                            let mut folded = vec![T::zero(); c * r];
                            for (j, f) in st.pending.iter().enumerate() {
                                for (ch, &v) in f.iter().enumerate() {
                                    folded[ch * r + j] = v;
                                }
                            }
                            st.pending.clear();
                            next.push(proj.apply(&folded));
                        }
                    }
                }
                Stage::Decoder => {
                    let proj = block.projection.as_ref().expect("decoder projection");
                    let partner = block.layout.skip_from.expect("decoder partner");
                    for f in frames {
                        let c = f.len() / r;
                        for j in 0..r {
                            let w: Vec<T> = (0..c).map(|ch| f[ch * r + j]).collect();
                            let mut u = proj.apply(&w);
                            let skip = state.skips[partner].pop_front().expect("skip frame precedes its decoder frame");
                            for (a, b) in u.iter_mut().zip(&skip) {
                                *a = *a + *b;
                            }
                            if let Some(h) = Self::body_push(block, st, u) {
                                next.push(h);
                            }
                        }
                    }
                }
                Stage::Neck | Stage::Output => {
                    next.extend(frames.into_iter().filter_map(|u| Self::body_push(block, st, u)));
                }
            }
            frames = next;
        }
        frames
    }
}

/// Clears all recurrent, PreConv, skip and output state.
pub fn reset_stream<T: Real>(net: &StreamingNetwork<T>, state: &mut StreamState<T>) {
    *state = net.new_state();
}

/// Feeds one chunk and returns the same number of output samples, delayed by
/// the network latency. The chunk length must be a positive multiple of the
/// total resampling factor.
pub fn run_streaming<T: Real>(net: &StreamingNetwork<T>, state: &mut StreamState<T>, chunk: &[T]) -> Result<Vec<T>> {
    let factor = net.total_factor;
    if chunk.is_empty() || !chunk.len().is_multiple_of(factor) {
        return Err(Error::ChunkAlignment { len: chunk.len(), factor });
    }
    if state.blocks.len() != net.blocks.len() || state.latency_samples != net.latency_samples {
        return Err(Error::ShapeMismatch("stream state belongs to a different network".into()));
    }
    let frames = chunk.iter().map(|&v| vec![v]).collect();
    for f in net.process_frames(state, frames) {
        state.output.push_back(f[0]);
    }
    debug_assert!(state.output.len() >= chunk.len());
    Ok(state.output.drain(..chunk.len()).collect())
}
