//! Seeded random streams.
//!
//! Every consumer of randomness draws from a ChaCha20 generator keyed by the
//! run's master seed, with the 64-bit stream id split into a domain tag (high
//! 32 bits) and an index (low 32 bits). Streams are independent, so samples
//! and epochs can be generated in any order or in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Index = global sample number.
    Dataset = 0,
    /// Index = parameter-group number.
    Init = 1,
    /// Index = epoch.
    Shuffle = 2,
}

pub fn stream(master_seed: u64, domain: Domain, index: u64) -> ChaCha20Rng {
    assert!(index <= u32::MAX as u64, "stream index exceeds 32 bits");
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(((domain as u64) << 32) | index);
    rng
}
