//! Seed derivation for reproducible runs.
//!
//! Every random decision in a run is drawn from a `ChaCha8Rng` whose seed is
//! derived from the experiment seed plus a stable label (goal id, rank, ...),
//! so results never depend on iteration order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a label and an index into a new seed.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut h = FNV_OFFSET ^ splitmix(seed);
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix(h ^ splitmix(index.wrapping_add(1)))
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    seeded_rng(derive_seed(seed, label, index))
}
