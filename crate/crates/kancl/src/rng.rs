//! Seeded RNG streams. Every consumer of randomness gets its own ChaCha8
//! stream so that unrelated features never perturb each other's draws —
//! e.g. swapping the ViT feed-forward kind must leave attention init
//! untouched, and enabling replay must not shift batch shuffling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Purpose-scoped stream ids. Component init gets `INIT_BASE + component`,
/// so each layer/block draws from a private stream.
pub const STREAM_SHUFFLE: u64 = 1;
pub const STREAM_REPLAY_DRAW: u64 = 2;
pub const STREAM_BUFFER_FILL: u64 = 3;
pub const STREAM_DROPOUT: u64 = 4;
pub const STREAM_SYNTH_DATA: u64 = 5;
pub const STREAM_CAP: u64 = 6;
pub const INIT_BASE: u64 = 100;

pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Uniform draw in [-bound, bound].
pub fn uniform_sym(rng: &mut ChaCha8Rng, bound: f32) -> f32 {
    rng.gen_range(-bound..=bound)
}

/// Uniform draw from [0, 1).
pub fn uniform01(rng: &mut ChaCha8Rng) -> f32 {
    rng.gen_range(0.0..1.0)
}

/// Standard normal via Box-Muller (we only need moments, not tail speed).
pub fn normal(rng: &mut ChaCha8Rng) -> f32 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32
}

/// Fisher-Yates shuffle, deterministic for a given rng state.
pub fn shuffle<T>(rng: &mut ChaCha8Rng, xs: &mut [T]) {
    for i in (1..xs.len()).rev() {
        let j = rng.gen_range(0..=i);
        xs.swap(i, j);
    }
}
