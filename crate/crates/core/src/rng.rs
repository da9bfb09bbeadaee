//! Seeded random streams. Every Monte Carlo consumer derives its generator
//! from `(seed, stream)` so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Identifier recorded in reports next to the seed.
pub const RNG_ALGORITHM: &str = "chacha20";

pub type Rng = ChaCha20Rng;

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Streams reserved per consumer so they never overlap.
pub mod streams {
    pub const ASSIGNMENT: u64 = 1;
    pub const DEMOGRAPHICS: u64 = 2;
    /// Offset added to a trial's ordinal for synthetic/mixture backends.
    pub const BACKEND: u64 = 1 << 32;
    /// Offset added to a replicate index for bootstrap and ceiling draws.
    pub const REPLICATE: u64 = 2 << 32;
    pub const SYNTH: u64 = 3 << 32;
}
