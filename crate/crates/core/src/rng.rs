//! Seeded randomness.
//!
//! Every random draw in the crate comes from [`Pcg64`] (PCG XSL-RR 128/64,
//! as implemented by `rand_pcg`) seeded through [`seeded`]. Independent
//! streams are derived with [`derive_seed`], a SplitMix64 finalizer over the
//! parent seed and a stream tag, so per-item generation never shares a
//! sequential RNG stream.

use rand::SeedableRng;
pub use rand_pcg::Pcg64;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a parent seed with a stream tag into a child seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix(splitmix(seed) ^ tag.wrapping_mul(GOLDEN))
}

/// Hashes a string tag (FNV-1a) for use with [`derive_seed`].
pub fn tag(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn seeded(seed: u64) -> Pcg64 {
    Pcg64::seed_from_u64(seed)
}
