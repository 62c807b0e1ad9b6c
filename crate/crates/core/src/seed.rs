//! Seed derivation.
//!
//! Every random draw in a run comes from a ChaCha stream keyed by the run seed
//! and a path of integers (step, stream tag, example index). Nothing carries
//! mutable generator state across steps, which keeps checkpoints small and
//! resumed runs bitwise identical to uninterrupted ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags used by the trainer and evaluators.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const SUP_DROPOUT: u64 = 3;
    pub const UDA_DROPOUT: u64 = 4;
    pub const UDA_AUGMENT: u64 = 5;
    pub const CON_ANCHOR: u64 = 6;
    pub const CON_VIEW: u64 = 7;
    pub const CON_AUGMENT: u64 = 8;
    pub const PGD_INIT: u64 = 9;
    pub const HARD_NEG: u64 = 10;
    pub const SAMPLE: u64 = 11;
    pub const SPLIT: u64 = 12;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of integers into a new 64-bit seed.
pub fn derive(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(base: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(base, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derivation_is_stable_and_path_sensitive() {
        assert_eq!(derive(7, &[1, 2]), derive(7, &[1, 2]));
        assert_ne!(derive(7, &[1, 2]), derive(7, &[2, 1]));
        assert_ne!(derive(7, &[1]), derive(8, &[1]));
        let a: u64 = rng(3, &[4]).random();
        let b: u64 = rng(3, &[4]).random();
        assert_eq!(a, b);
    }
}
