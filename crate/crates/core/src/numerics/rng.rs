use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Scalar;

/// Seedable random stream backed by ChaCha8.
///
/// The same seed yields the same stream on every platform. Independent
/// sub-streams are obtained with [`SeededRng::stream`], which selects a
/// different ChaCha stream id under the same key.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// A stream keyed by `seed` but disjoint from the default stream.
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Standard normal draw.
    pub fn gaussian<T: Scalar>(&mut self) -> T {
        T::lit(self.inner.sample::<f64, _>(StandardNormal))
    }

    pub fn gaussian_vec<T: Scalar>(&mut self, n: usize, scale: f64) -> Vec<T> {
        (0..n)
            .map(|_| T::lit(scale * self.inner.sample::<f64, _>(StandardNormal)))
            .collect()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<X>(&mut self, xs: &mut [X]) {
        xs.shuffle(&mut self.inner);
    }
}
