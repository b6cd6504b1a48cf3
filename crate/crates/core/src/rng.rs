//! Deterministic random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator seeded with
//! the caller's master seed. Independent draws (positional encoding, per-head
//! noise, per-layer offset assignment, ...) use distinct ChaCha stream ids, so
//! the value a head receives never depends on how many other heads were
//! initialized before it or in which order.
//!
//! The stream id packs `(purpose, layer, head)` as
//! `purpose << 56 | layer << 28 | head`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// What a stream is used for. The discriminant is the top byte of the id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    PosEncoding = 1,
    TargetNoise = 2,
    HeadOffsets = 3,
    DefaultWeights = 4,
    MimeticNoise = 5,
    Kernel = 6,
    Sweep = 7,
}

pub fn stream_id(purpose: Purpose, layer: usize, head: usize) -> u64 {
    debug_assert!(layer < (1 << 28) && head < (1 << 28));
    ((purpose as u64) << 56) | ((layer as u64) << 28) | head as u64
}

pub fn stream(seed: u64, purpose: Purpose, layer: usize, head: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(purpose, layer, head));
    rng
}

/// Plain generator for a seed, stream 0.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Normal(0, std) restricted to [-2 std, 2 std] by rejection.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    loop {
        let z = standard_normal(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}
