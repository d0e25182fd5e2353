//! Reverse-mode gradients of a whole network, replaying the forward tapes.

use ndarray::{Array2, ArrayView2};

use super::grad::kernel_gradients;
use super::loss::{smooth_l1, smooth_l1_grad};
use crate::error::{Error, Result};
use crate::exec::fft::fft_convolve_backward;
use crate::network::config::Stage;
use crate::network::layers::{activate_grad, downsample_backward, upsample_backward};
use crate::network::model::{Block, BodyTape, Network};

/// Gradient of the body `u + act(ssm(norm(preconv(u))))`; parameter gradients
/// are added into `grad`.
fn body_backward(block: &Block, tape: &BodyTape, g_out: ArrayView2<f64>, grad: &mut Block) -> Result<Array2<f64>> {
    let act = block.layout.activation;
    let g_s = Array2::from_shape_fn(g_out.dim(), |(c, t)| g_out[(c, t)] * activate_grad(act, tape.ssm_output[(c, t)]));
    let (g_q, dk) = fft_convolve_backward(tape.ssm_input.view(), &tape.discrete, g_s.view())?;
    kernel_gradients(&block.ssm, &dk)?.accumulate_into(&mut grad.ssm);
    let g_p = match (&block.norm, &tape.norm_cache) {
        (Some(norm), Some(cache)) => norm.backward(cache, g_q.view(), grad.norm.as_mut().expect("same structure")),
        _ => g_q,
    };
    let g_u = match &block.preconv {
        Some(pc) => pc.backward(tape.input.view(), g_p.view(), grad.preconv.as_mut().expect("same structure")),
        None => g_p,
    };
    Ok(&g_out + &g_u)
}

impl Network {
    /// Gradients of `sum_t g_out[t] y[t]` with respect to every tensor, where
    /// `y` is the batch output for `input`. Buffers get zero gradient.
    pub fn backward(&self, input: &[f64], g_out: &[f64]) -> Result<Network> {
        let (_, tapes) = self.run(input, true)?;
        self.backward_from_tapes(&tapes, g_out)
    }

    pub(crate) fn backward_from_tapes(
        &self,
        tapes: &[crate::network::model::BlockTape],
        g_out: &[f64],
    ) -> Result<Network> {
        let mut grad = self.zeroed();
        let mut g = Array2::from_shape_vec((1, g_out.len()), g_out.to_vec()).expect("shape");
        let mut skip_grads: Vec<Option<Array2<f64>>> = vec![None; self.blocks.len()];
        for k in (0..self.blocks.len()).rev() {
            let block = &self.blocks[k];
            let tape = &tapes[k];
            let layout = block.layout;
            let gblock = &mut grad.blocks[k];
            match layout.stage {
                Stage::Neck | Stage::Output => {
                    g = body_backward(block, &tape.body, g.view(), gblock)?;
                }
                Stage::Decoder => {
                    let g_u = body_backward(block, &tape.body, g.view(), gblock)?;
                    let partner = layout.skip_from.expect("decoder partner");
                    match &mut skip_grads[partner] {
                        Some(acc) => *acc += &g_u,
                        slot => *slot = Some(g_u.clone()),
                    }
                    let x = tape.resample_input.as_ref().expect("decoder input");
                    let proj = block.resample.as_ref().expect("decoder projection");
                    let gproj = gblock.resample.as_mut().expect("same structure");
                    g = upsample_backward(x.view(), layout.factor, proj, g_u.view(), gproj)?;
                }
                Stage::Encoder => {
                    let h = tape.resample_input.as_ref().expect("encoder body output");
                    let proj = block.resample.as_ref().expect("encoder projection");
                    let gproj = gblock.resample.as_mut().expect("same structure");
                    let mut g_h = downsample_backward(h.view(), layout.factor, proj, g.view(), gproj)?;
                    if let Some(sg) = &skip_grads[k] {
                        g_h += sg;
                    }
                    g = body_backward(block, &tape.body, g_h.view(), gblock)?;
                }
            }
        }
        for (meta, t) in grad.tensors_mut() {
            if !meta.role.learnable() {
                t.fill(0.0);
            }
        }
        Ok(grad)
    }

    /// SmoothL1 loss of the batch output against `target` and its gradient.
    pub fn loss_and_grad(&self, input: &[f64], target: &[f64], beta: f64) -> Result<(f64, Network)> {
        if input.len() != target.len() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} samples, target {}",
                input.len(),
                target.len()
            )));
        }
        let (out, tapes) = self.run(input, true)?;
        let loss = smooth_l1(&out, target, beta)?;
        let g = smooth_l1_grad(&out, target, beta)?;
        Ok((loss, self.backward_from_tapes(&tapes, &g)?))
    }
}
