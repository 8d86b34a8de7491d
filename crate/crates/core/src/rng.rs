//! Deterministic random-number helpers.
//!
//! Every stochastic component takes an explicit `u64` seed and draws from a
//! ChaCha8 stream, so runs are reproducible across platforms and across
//! releases of the standard `rand` distributions we avoid here.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The pseudo-random generator used throughout the crate.
pub type Prng = ChaCha8Rng;

/// A generator for the given seed.
pub fn seeded(seed: u64) -> Prng {
    Prng::seed_from_u64(seed)
}

/// A generator for an independent substream of `seed`.
///
/// Mixing (splitmix64 finalizer) decorrelates nearby `(seed, stream)` pairs,
/// so components can carve private streams out of one run seed without their
/// draws interleaving.
pub fn substream(seed: u64, stream: u64) -> Prng {
    Prng::seed_from_u64(derive_seed(seed, stream))
}

/// A derived seed for substream `stream` of `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix(seed ^ mix(stream))
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw in `[lo, hi)` as `f64`.
pub fn uniform(rng: &mut Prng, lo: f64, hi: f64) -> f64 {
    use rand::Rng;
    lo + (hi - lo) * rng.random::<f64>()
}

/// Uniform integer draw in `[0, n)`.
pub fn index(rng: &mut Prng, n: usize) -> usize {
    use rand::Rng;
    rng.random_range(0..n)
}
