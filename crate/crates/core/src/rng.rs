//! Seeded, platform-independent random streams.
//!
//! Every stochastic routine takes a `u64` seed and draws from ChaCha8, whose
//! output is fully specified and identical across platforms. Independent
//! sub-streams are derived with [`derive_seed`].

use rand::{Rng, SeedableRng};
pub use rand_chacha::ChaCha8Rng as StreamRng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub fn stream(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-stream `index` of `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix64(mix64(seed) ^ mix64(index.wrapping_add(0xA076_1D64_78BD_642F)))
}

pub fn standard_normal<T: Scalar>(rows: usize, cols: usize, rng: &mut StreamRng) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        T::lit(z)
    })
}

pub fn uniform<T: Scalar>(rows: usize, cols: usize, bound: f64, rng: &mut StreamRng) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| T::lit(rng.random_range(-bound..=bound)))
}
