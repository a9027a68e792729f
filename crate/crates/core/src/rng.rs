//! Counter-based random streams.
//!
//! A stream is ChaCha8 keyed by `seed` with the ChaCha stream id set to
//! `index`, so stream `(seed, i)` never depends on how many values were drawn
//! from any other stream. Batches can be produced in any order or in
//! parallel and still come out identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
