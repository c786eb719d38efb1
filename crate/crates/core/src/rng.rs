//! Seeded random number generation.
//!
//! Every stochastic routine takes an explicit seed so that runs are
//! bit-reproducible on a single thread.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::numerics::ImageTensor;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// i.i.d. `N(0, sigma^2)` tensor.
pub fn gaussian_tensor<R: Rng + ?Sized>(
    rng: &mut R,
    channels: usize,
    height: usize,
    width: usize,
    sigma: f64,
) -> ImageTensor {
    ImageTensor::from_fn(channels, height, width, |_, _, _| {
        sigma * rng.sample::<f64, _>(StandardNormal)
    })
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}
