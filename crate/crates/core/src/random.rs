//! Seeded randomness. Every stochastic operation derives its generator from an explicit
//! seed so runs are reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::Scalar;

pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a stream tag and index (splitmix64 finalizer) so that
/// independent sub-tasks draw from unrelated streams.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    let v: f64 = rng.sample(StandardNormal);
    T::lit(v)
}

pub fn normal_vec<T: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<T> {
    (0..n).map(|_| normal(rng)).collect()
}

pub fn uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> T {
    if hi <= lo {
        return T::lit(lo);
    }
    T::lit(rng.random_range(lo..hi))
}
