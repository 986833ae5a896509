//! Counter-based random streams: every (seed, purpose, index) triple maps to
//! its own ChaCha stream, so draws never depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream purposes. Values are part of the reproducibility contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Covariates = 1,
    Treatment = 2,
    Survival = 3,
    Censoring = 4,
    Bootstrap = 5,
    Replicate = 6,
    Oracle = 7,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(splitmix((purpose as u64) << 56 ^ index));
    rng
}

/// Derives a child seed, e.g. one per simulation replicate.
pub fn child_seed(seed: u64, purpose: Purpose, index: u64) -> u64 {
    splitmix(seed ^ splitmix((purpose as u64) << 56 ^ index))
}
