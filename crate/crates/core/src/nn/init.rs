use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Standard deviation of He initialization, `sqrt(2 / fan_in)`.
pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

/// Zero-mean Gaussian weights with standard deviation `sqrt(2 / fan_in)`,
/// deterministic in `seed`.
pub fn he_init(shape: &[usize], fan_in: usize, seed: u64) -> Result<Tensor<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    he_init_with(shape, fan_in, &mut rng)
}

pub fn he_init_with<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Result<Tensor<f32>> {
    if fan_in == 0 {
        return Err(Error::invalid("he_init: fan_in must be positive"));
    }
    let std = he_std(fan_in);
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        (z * std) as f32
    })
}
