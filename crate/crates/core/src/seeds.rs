//! Seed derivation. Every random draw in a run is keyed by the run seed plus
//! a purpose tag and a counter, so results do not depend on call order or on
//! which other cells of an experiment ran first.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3))
}

pub fn derive_seed(base: u64, tag: &str, counter: u64) -> u64 {
    splitmix64(splitmix64(base ^ fnv1a(tag)) ^ counter.wrapping_mul(GOLDEN))
}
