//! Seeded, splittable random streams.
//!
//! Every scenario cell derives its own ChaCha8 stream from a root seed and a
//! path of labels, so results never depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A node in a tree of independent random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedStream {
    key: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self {
            key: splitmix64(seed),
        }
    }

    /// Derives an independent child stream.
    pub fn child(&self, label: u64) -> Self {
        Self {
            key: splitmix64(self.key ^ splitmix64(label.wrapping_add(0xA076_1D64_78BD_642F))),
        }
    }

    /// Child stream keyed by a string label (scenario names, method names).
    pub fn child_str(&self, label: &str) -> Self {
        // FNV-1a; stable across platforms and releases unlike `DefaultHasher`.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        self.child(h)
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.key);
        rng.set_stream(self.key.rotate_left(17));
        rng
    }
}
