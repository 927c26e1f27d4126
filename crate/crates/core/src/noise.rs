//! Seeded white noise with a prescribed `L^2` norm.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::grid::{Grid, GridFunction};

/// Gaussian white noise with `||e||_{L^2} = 1` and `e(0) = 0`.
pub fn unit_noise(grid: Grid, seed: u64) -> GridFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vals: Vec<f64> = (0..grid.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    vals[0] = 0.0;
    let f = GridFunction::from_raw(grid, vals);
    let norm = f.l2();
    f.scale(1.0 / norm)
}
