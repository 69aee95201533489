//! Stable seed derivation.
//!
//! Every random stream in a run is derived from the user-facing seeds by
//! hashing a path of labels, so no global RNG state exists and results do not
//! depend on execution order or on the standard library's hasher.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Builder for a derived seed: `SeedPath::new(base).label("mcme").index(3).finish()`.
#[derive(Debug, Clone, Copy)]
pub struct SeedPath(u64);

impl SeedPath {
    pub fn new(base: u64) -> Self {
        SeedPath(splitmix64(base))
    }

    pub fn label(self, s: &str) -> Self {
        SeedPath(splitmix64(self.0 ^ fnv1a(s.as_bytes())))
    }

    pub fn index(self, i: u64) -> Self {
        SeedPath(splitmix64(
            self.0 ^ splitmix64(i.wrapping_add(0x5851_f42d_4c95_7f2d)),
        ))
    }

    pub fn finish(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> Rng {
        rng(self.0)
    }
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
