//! Seed derivation. Every random stream is keyed by `(seed, index)` so work
//! can be split across threads without changing the numbers drawn.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for the `index`-th independent stream under `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for a named subsystem under a root seed.
pub fn derive_seed(root: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, then mixed with the root.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(root ^ splitmix64(h))
}

/// Child seed keyed by an integer (coalition bits, trial number, ...).
pub fn derive_seed_u64(root: u64, key: u64) -> u64 {
    splitmix64(root ^ splitmix64(key.wrapping_add(0x5851_F42D_4C95_7F2D)))
}
