//! Execution modes of SSM layers and of the whole network.

pub mod fft;
pub mod recurrent;
pub mod stream;

pub use fft::{fft_convolve, fft_convolve_backward};
pub use recurrent::{run_recurrent, step_recurrent, RecurrentSsm};
pub use stream::{reset_stream, run_streaming, StreamState, StreamingNetwork};
