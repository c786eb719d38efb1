//! Conditional Gibbs super-resolution with scattering sufficient statistics.
//!
//! The crate is `no_std` (it needs `alloc`). It provides:
//!
//! * [`numerics`]: tensors, FFTs and circular convolution;
//! * [`wavelets`]: Morlet, total-variation and Gaussian filters;
//! * [`scattering`]: the scattering feature network and its exact gradient;
//! * [`degradation`]: anti-aliased downsampling, bicubic prediction, residuals;
//! * [`predictor`]: small convolutional networks with training loops;
//! * [`inference`]: Gibbs energies and gradient-descent mode sampling;
//! * [`finetune`]: likelihood-gradient estimators and an enumerable toy model;
//! * [`metrics`]: PSNR, relative errors and stability curves.
//!
//! Float functions come from `num_traits::Float` (backed by `libm`). Test
//! builds link `std`, whose inherent methods shadow the trait, so those
//! imports carry `allow(unused_imports)`.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod degradation;
pub mod error;
pub mod finetune;
pub mod inference;
pub mod metrics;
pub mod numerics;
pub mod optim;
pub mod predictor;
pub mod rng;
pub mod scattering;
pub mod wavelets;

pub use error::{Error, Result};
pub use numerics::{ComplexPlane, ImageTensor};
