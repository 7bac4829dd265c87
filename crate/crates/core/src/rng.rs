//! Seeded, counter-based random streams.
//!
//! Every consumer draws from a ChaCha20 stream keyed by a 64-bit seed and
//! addressed by `(domain, index)`, so draws never depend on which thread or in
//! which order the work runs.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Stream domains.
pub mod domain {
    pub const DATA: u64 = 1;
    pub const PERMUTATION: u64 = 2;
}

/// Rows of random permutations drawn per round of iterative screening.
pub(crate) const PERMUTATIONS_PER_ROUND: u64 = 1 << 20;

pub fn stream_rng(seed: u64, domain: u64, index: u64) -> ChaCha20Rng {
    debug_assert!(index < 1 << 48);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream((domain << 48) | index);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `index` under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}
