//! Seeded random sources shared by every stochastic routine.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::grid::Grid3;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal field, drawn in storage order.
pub fn normal_grid(rng: &mut Rng, dims: [usize; 3]) -> Grid3<f32> {
    Grid3::from_fn(dims, |_, _, _| StandardNormal.sample(rng))
}
