//! Training: SmoothL1 loss, analytic SSM and network gradients, AdamW and
//! the toy denoising run.

pub mod backprop;
pub mod grad;
pub mod loss;
pub mod optim;
pub mod toy;

pub use grad::{kernel_gradients, GradientBundle};
pub use loss::{smooth_l1, smooth_l1_grad, LossSpec, DEFAULT_BETA};
pub use optim::{lr_at, AdamW, AdamWConfig, StepInfo};
pub use toy::{pooled_snr_db, toy_network_config, train_toy, train_toy_with, StepMetrics, ToyConfig, ToyReport};
