use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{ArchConfig, Model};
use crate::tensor::Tensor;
use crate::Result;

/// `sqrt(6 / (fan_in + fan_out))` for a `(kh, kw, cin, cout)` weight.
pub fn xavier_bound(shape: &[usize]) -> f64 {
    let receptive: usize = shape[..shape.len() - 2].iter().product();
    let fan_in = receptive * shape[shape.len() - 2];
    let fan_out = receptive * shape[shape.len() - 1];
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Uniform Xavier weights for rank-4 shapes; biases (rank 1) are zero.
pub fn xavier_init<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<f32> {
    if shape.len() < 2 {
        return Tensor::zeros(shape.to_vec());
    }
    let a = xavier_bound(shape) as f32;
    let dist = Uniform::new_inclusive(-a, a);
    Tensor::from_fn(shape.to_vec(), |_| dist.sample(rng))
}

/// Builds a model with Xavier weights drawn from a generator seeded by `seed`,
/// in parameter registration order.
pub fn xavier_model(config: ArchConfig, seed: u64) -> Result<Model<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Model::with_init(config, |_, shape| xavier_init(shape, &mut rng))
}
