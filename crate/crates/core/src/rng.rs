//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by a
//! run seed and a [`Stream`] id. Streams are independent: adding draws to one
//! (say, a different adapter rank) never shifts another (the feature map or
//! the replay buffer), so dense and low-rank critics with the same seed see
//! the same features, data, batches and base weights.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::Scalar;

/// Named random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Features,
    Buffer,
    Weights,
    Adapters,
    /// Rescaled or rank-limited frozen bases built when wrapping a network.
    Base,
    Batches,
    Mask,
    Noise,
    /// Free stream for tests and property suites.
    Custom(u32),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Features => 1,
            Stream::Buffer => 2,
            Stream::Weights => 3,
            Stream::Adapters => 4,
            Stream::Batches => 5,
            Stream::Mask => 6,
            Stream::Noise => 7,
            Stream::Base => 8,
            Stream::Custom(k) => 1000 + k as u64,
        }
    }
}

pub type Rng = ChaCha8Rng;

/// Generator for `(seed, stream)`.
pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}

pub fn normal<T: Scalar>(rng: &mut Rng, std: f64) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::lit(z * std)
}

/// Sample from U(-bound, bound).
pub fn uniform_sym<T: Scalar>(rng: &mut Rng, bound: f64) -> T {
    let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    T::lit(u.sample(rng))
}

/// Uniform index in `0..n`.
pub fn index(rng: &mut Rng, n: usize) -> usize {
    Uniform::new(0, n).expect("n > 0").sample(rng)
}
