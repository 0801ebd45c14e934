//! A small reverse-mode kernel for sequential dense networks.
//!
//! Batches are `ndarray` matrices with one sample per row. Every forward that
//! is going to be differentiated records a [`ForwardTrace`]; backward passes
//! consume that trace and never recompute activations.

mod activation;
mod adam;
mod batchnorm;
mod dense;
pub mod io;
mod network;

pub use activation::{sigmoid, Activation};
pub use adam::{AdamConfig, AdamState};
pub use batchnorm::{
    BatchNormCache, BatchNormGrad, BatchNormMode, BatchNormState, DEFAULT_BN_EPS,
    DEFAULT_BN_MOMENTUM,
};
pub use dense::{DenseGrad, DenseParams};
pub use io::{LayerFile, NetworkFile};
pub use network::{
    random_dense, ForwardTrace, Layer, LayerGrad, LayerSpec, Network, NetworkGrad, NetworkOptimizer,
};
