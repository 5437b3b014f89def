//! Deterministic seeding.
//!
//! All randomness in the crate flows from a single `u64` master seed through
//! [`DetRng`] (ChaCha8), with per-unit substreams derived by [`derive_seed`]
//! so that sequences can be generated independently and reproducibly.

use rand::SeedableRng;

pub type DetRng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> DetRng {
    DetRng::seed_from_u64(seed)
}

/// SplitMix64 finalizer over (seed, stream); platform-independent.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn substreams_differ_and_are_stable() {
        let a = derive_seed(7, 0);
        let b = derive_seed(7, 1);
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(7, 0));
        let mut r1 = rng_from_seed(a);
        let mut r2 = rng_from_seed(a);
        assert_eq!(r1.random::<u64>(), r2.random::<u64>());
    }
}
