//! Seeded random streams.
//!
//! Batched simulation splits work into fixed-size chunks and gives every chunk
//! its own ChaCha stream, so results depend only on the base seed and never on
//! how chunks are scheduled across worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type PdnsRng = ChaCha8Rng;

/// Trajectories simulated together in one batched chunk.
pub const CHUNK: usize = 256;

pub fn seeded(seed: u64) -> PdnsRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` derived from `seed`.
pub fn stream(seed: u64, stream: u64) -> PdnsRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws a fresh base seed from a caller-supplied generator.
pub fn fork<R: Rng + ?Sized>(rng: &mut R) -> u64 {
    rng.random()
}

/// `(start, len)` pairs covering `0..n` in chunks of [`CHUNK`].
pub fn chunks(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .step_by(CHUNK)
        .map(|start| (start, CHUNK.min(n - start)))
        .collect()
}
