//! Named, seedable random streams.
//!
//! Every random quantity in the simulator draws from its own stream keyed by
//! (seed, purpose, entity). Streams are derived by chaining a splitmix64
//! finalizer over the three key parts, then seeding a portable ChaCha
//! generator. Two properties matter downstream:
//!
//! * determinism — the same key always yields the same stream on every
//!   platform;
//! * isolation — adding funds or securities creates new streams without
//!   perturbing existing ones, so enlarging a simulation leaves the shared
//!   entities' draws bit-identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 step with the standard finalizer constants.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// What a stream is for; part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    SecurityTraits = 1,
    SecurityIdio = 2,
    Market = 3,
    FundTraits = 4,
    FundFlowNoise = 5,
}

/// Independent generator for (seed, purpose, entity).
pub fn stream(seed: u64, purpose: Purpose, entity: u64) -> ChaCha8Rng {
    let mut state = seed;
    let a = splitmix64(&mut state);
    state = a ^ (purpose as u64).wrapping_mul(0xA076_1D64_78BD_642F);
    let b = splitmix64(&mut state);
    state = b ^ entity.wrapping_mul(0xE703_7ED1_A0B4_28DB);
    ChaCha8Rng::seed_from_u64(splitmix64(&mut state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let mut a1 = stream(42, Purpose::Market, 0);
        let mut a2 = stream(42, Purpose::Market, 0);
        let draws1: Vec<u64> = (0..8).map(|_| a1.random()).collect();
        let draws2: Vec<u64> = (0..8).map(|_| a2.random()).collect();
        assert_eq!(draws1, draws2);

        let mut b = stream(42, Purpose::Market, 1);
        let mut c = stream(42, Purpose::FundTraits, 0);
        let mut d = stream(43, Purpose::Market, 0);
        let db: Vec<u64> = (0..8).map(|_| b.random()).collect();
        let dc: Vec<u64> = (0..8).map(|_| c.random()).collect();
        let dd: Vec<u64> = (0..8).map(|_| d.random()).collect();
        assert_ne!(draws1, db, "entity changes the stream");
        assert_ne!(draws1, dc, "purpose changes the stream");
        assert_ne!(draws1, dd, "seed changes the stream");
    }

    #[test]
    fn splitmix_reference_values() {
        // reference sequence for seed 1234567 from the published algorithm
        let mut s = 1234567u64;
        let x0 = splitmix64(&mut s);
        let x1 = splitmix64(&mut s);
        assert_ne!(x0, x1);
        // stability check: pin the first output so accidental edits to the
        // constants are caught
        let mut s2 = 0u64;
        assert_eq!(splitmix64(&mut s2), 0xE220_A839_7B1D_CDAF);
    }
}
