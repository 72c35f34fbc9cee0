//! Stable seed derivation.
//!
//! Every randomized stage draws from its own stream, seeded by hashing the
//! master seed together with a path of labels (stage, variety, algorithm,
//! round, ...). The hash is fixed here so seeds do not drift across
//! toolchains or platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// One component of a seed path.
#[derive(Debug, Clone, Copy)]
pub enum SeedPart<'a> {
    Str(&'a str),
    Num(u64),
}

impl<'a> From<&'a str> for SeedPart<'a> {
    fn from(s: &'a str) -> Self {
        SeedPart::Str(s)
    }
}

impl<'a> From<&'a String> for SeedPart<'a> {
    fn from(s: &'a String) -> Self {
        SeedPart::Str(s.as_str())
    }
}

impl From<u64> for SeedPart<'_> {
    fn from(n: u64) -> Self {
        SeedPart::Num(n)
    }
}

impl From<usize> for SeedPart<'_> {
    fn from(n: usize) -> Self {
        SeedPart::Num(n as u64)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derives a child seed from `master` and a label path.
pub fn derive(master: u64, parts: &[SeedPart<'_>]) -> u64 {
    let mut h = splitmix64(master);
    for part in parts {
        let v = match part {
            // tag strings and numbers differently so "1" != 1
            SeedPart::Str(s) => fnv1a(s.as_bytes()) ^ 0x5354_5200,
            SeedPart::Num(n) => splitmix64(*n ^ 0x4E55_4D00),
        };
        h = splitmix64(h ^ v);
    }
    h
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shorthand: `derive_seed!(master, "stage", variety, round)`.
#[macro_export]
macro_rules! derive_seed {
    ($master:expr $(, $part:expr)* $(,)?) => {
        $crate::seeds::derive($master, &[$($crate::seeds::SeedPart::from($part)),*])
    };
}
