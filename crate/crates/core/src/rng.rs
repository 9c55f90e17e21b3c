//! Seeded, splittable randomness.
//!
//! Every random draw in the crate goes through an [`RngHandle`]. A handle is a
//! `(seed, stream)` pair naming a ChaCha8 keystream, so the same handle yields
//! the same sequence on every platform. Work units (replicates, splits, rows)
//! get their own child handles, which keeps results independent of execution
//! order and thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngHandle {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngHandle {
    pub fn new(seed: u64) -> Self {
        RngHandle { seed, stream: 0 }
    }

    /// Fresh generator positioned at the start of this handle's stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Independent child stream `index` of this handle.
    pub fn child(&self, index: u64) -> RngHandle {
        RngHandle {
            seed: splitmix64(splitmix64(self.seed) ^ self.stream.rotate_left(17)),
            stream: index,
        }
    }

    /// Child stream keyed by a string, stable across builds (FNV-1a).
    pub fn child_named(&self, name: &str) -> RngHandle {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in name.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.child(h)
    }
}
