//! Seeded, splittable random streams.
//!
//! Every stochastic routine takes an explicit `&mut impl Rng`. Independent
//! streams for items, steps and phases are derived from a base seed with
//! [`derive_seed`], so work can be reordered or parallelised without
//! changing any draw.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finaliser. A bijection on u64.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of sub-stream `stream` of `seed`.
///
/// For a fixed `seed` this is injective in `stream`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(mix64(seed).wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// Derives a seed from a path of stream indices, e.g. `[phase, step, item]`.
pub fn derive_path(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(seed, |s, &p| derive_seed(s, p))
}

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}
