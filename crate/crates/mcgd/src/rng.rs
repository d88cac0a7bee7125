//! The repository-wide pseudo-random generator.
//!
//! Every stochastic component draws from ChaCha8 seeded from a 64-bit value.
//! Independent substreams are addressed by ChaCha's 64-bit stream id, so a
//! `(seed, stream)` pair always names the same sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type RepoRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> RepoRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(seed: u64, stream: u64) -> RepoRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform draw in `[0, 1)`.
pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.gen::<f64>()
}

/// Standard normal draw by the Box–Muller transform (cosine branch only, so
/// each call consumes exactly two uniforms).
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // 1 - u lies in (0, 1], keeping the log finite.
    let u1 = 1.0 - rng.gen::<f64>();
    let u2 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
