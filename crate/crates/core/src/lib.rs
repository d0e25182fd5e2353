//! Deep state-space engine for raw-waveform speech enhancement.
//!
//! The crate is organised bottom-up:
//!
//! - [`ssm`]: parameterization, initialization, zero-order-hold discretization,
//!   impulse-response kernels and dense-to-diagonal conversion of one SSM layer.
//! - [`planner`]: cost model for the two contraction orders of the Fourier-domain
//!   SSM einsum and the rule that picks between them.
//! - [`exec`]: the two execution modes of a layer (FFT long convolution and
//!   streaming recurrence) plus chunked streaming of a whole network.
//! - [`network`]: the hourglass encoder/neck/decoder network, its accounting
//!   (latency, parameters, MACs) and the binary weight format.
//! - [`audio`]: WAV I/O, mu-law degradation, decimate-and-repeat and SNR mixing.
//! - [`train`]: SmoothL1 loss, analytic gradients, AdamW and the toy denoising run.

pub mod audio;
pub mod error;
pub mod exec;
pub mod network;
pub mod planner;
pub mod scalar;
pub mod ssm;
pub mod train;

pub use error::{Error, Result};
