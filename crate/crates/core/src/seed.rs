//! Deterministic derivation of independent RNG streams from a master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` and a key path such as
/// `["housing", "aggmi", "7"]`. Stable across platforms and releases.
pub fn derive_seed(master: u64, keys: &[&str]) -> u64 {
    let mut h = splitmix64(master);
    for key in keys {
        let mut f = FNV_OFFSET;
        for b in key.bytes() {
            f ^= u64::from(b);
            f = f.wrapping_mul(FNV_PRIME);
        }
        // separator so ["ab","c"] and ["a","bc"] differ
        f ^= 0xff;
        f = f.wrapping_mul(FNV_PRIME);
        h = splitmix64(h ^ f);
    }
    h
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
