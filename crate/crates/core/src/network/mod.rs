//! The hourglass network: configuration, layers, model, accounting and weight files.

pub mod accounting;
pub mod config;
pub mod layers;
pub mod model;
pub mod weights;

pub use accounting::{compute_latency, count_macs, count_params, preconv_latencies, Latency};
pub use config::{Activation, BlockLayout, BlockSpec, NetworkConfig, NormKind, Stage};
pub use model::{build_network, Block, Network, TensorMeta, TensorRole};
pub use weights::{load_weights, load_weights_into, save_weights};
