//! Labelled seed derivation.
//!
//! Every random stream in the crate is derived from one root seed by mixing in
//! a path of labels (recursion node, column index, pipeline stage, ...), so
//! any sub-computation can be reproduced without replaying the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a label path.
pub fn derive(seed: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(seed), |acc, &l| splitmix64(acc ^ splitmix64(l.wrapping_add(GOLDEN))))
}

/// Derives a child seed from a textual stage label.
pub fn derive_str(seed: u64, label: &str) -> u64 {
    // FNV-1a, stable across platforms and releases.
    let h = label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    derive(seed, &[h])
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
