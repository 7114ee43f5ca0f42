//! Seeded generator streams.
//!
//! All randomness comes from ChaCha20 seeded with the run seed. Each consumer
//! draws from its own stream so that, for example, changing the output rank
//! does not perturb the reservoir draws.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Generator family recorded in checkpoints.
pub const RNG_FAMILY: &str = "ChaCha20";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    InputMatrix = 1,
    RecurrentMatrix = 2,
    LeakingRates = 3,
    SpectralProbe = 4,
    OutputHead = 5,
    Shuffle = 6,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
