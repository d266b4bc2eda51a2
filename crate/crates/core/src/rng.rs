//! Seed splitting.
//!
//! Every random stream in the crate is derived from one root seed plus a
//! label path, e.g. `("student", fold, "order")`. A child seed is computed
//! by folding each label component into the parent with SplitMix64:
//!
//! ```text
//! child = splitmix64(parent ^ splitmix64(fnv1a64(label)))
//! ```
//!
//! Integer labels are hashed through their decimal representation. The
//! resulting `u64` seeds a `ChaCha8Rng`, so streams are identical across
//! platforms and independent of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// A node in the seed tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree(u64);

impl SeedTree {
    pub fn new(root: u64) -> Self {
        SeedTree(root)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn child(self, label: impl std::fmt::Display) -> Self {
        let h = fnv1a64(label.to_string().as_bytes());
        SeedTree(splitmix64(self.0 ^ splitmix64(h)))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
