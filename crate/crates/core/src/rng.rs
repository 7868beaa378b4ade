//! Seeded random streams. One experiment seed is forked into independent
//! ChaCha streams so that, for example, changing the validation mask size
//! leaves the train/probe split untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Split = 1,
    Mask = 2,
    Subsample = 3,
}

pub fn substream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
