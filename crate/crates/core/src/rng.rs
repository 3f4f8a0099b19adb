//! Seeded random streams.
//!
//! Every stream is a xoshiro256++ generator whose 256-bit state is expanded
//! from a 64-bit seed by splitmix64 (`SeedableRng::seed_from_u64`). Derived
//! streams mix a parent seed with a label through [`hash64`], so a run seed
//! fixes model init, data, dropout and evaluation streams independently.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

pub fn rng_from_seed(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Stream derived from `seed` and a purpose label.
pub fn derive(seed: u64, label: &str) -> Rng {
    rng_from_seed(hash64(&[seed, hash_str(label)]))
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive, platform-stable hash of a word sequence.
pub fn hash64(words: &[u64]) -> u64 {
    let mut h = 0x6a09_e667_f3bc_c908u64 ^ (words.len() as u64);
    for &w in words {
        h = splitmix64(h ^ splitmix64(w));
    }
    h
}

/// FNV-1a over UTF-8 bytes, finished with splitmix64.
pub fn hash_str(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(h)
}
