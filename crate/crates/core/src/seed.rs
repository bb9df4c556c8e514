//! Stage-scoped seed derivation.
//!
//! Every random stage of the pipeline draws from its own stream so changing
//! one stage's seed never perturbs another stage's output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random generator used everywhere in the crate (stable across platforms).
pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seed for a named stage under a global seed.
pub fn stage_seed(global: u64, stage: &str) -> u64 {
    splitmix64(global ^ fnv1a(stage.as_bytes()))
}

/// Seed for one key (typically a user id) inside a stage stream.
pub fn keyed_seed(stage: u64, key: u64) -> u64 {
    splitmix64(stage ^ splitmix64(key))
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages_are_independent() {
        assert_ne!(stage_seed(7, "split"), stage_seed(7, "sample"));
        assert_eq!(stage_seed(7, "split"), stage_seed(7, "split"));
        assert_ne!(keyed_seed(1, 2), keyed_seed(1, 3));
    }
}
