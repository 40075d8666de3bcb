//! Seeded random streams.
//!
//! A run owns one seed. Independent streams are derived from it by key
//! (epoch, batch, layer, ...) so that draws do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Deterministic stream for a key path.
    pub fn stream(&self, key: &[u64]) -> Rng {
        let mut h = splitmix64(self.seed);
        for &k in key {
            h = splitmix64(h ^ splitmix64(k.wrapping_add(0x5851_F42D_4C95_7F2D)));
        }
        ChaCha8Rng::seed_from_u64(h)
    }
}
