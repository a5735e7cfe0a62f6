//! Reproducible random streams.
//!
//! An [`Rng`] is a plain `(seed, stream_id)` value, not a stateful generator.
//! Consumers call [`Rng::generator`] to get a fresh ChaCha8 instance, and
//! [`Rng::derive`] to split off independent child streams (one per Monte Carlo
//! sample, per epoch, ...). Identical values always yield identical draws,
//! which is what lets parallel sample evaluation stay bit-reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rng {
    pub seed: u64,
    pub stream_id: u64,
}

impl Rng {
    pub const fn new(seed: u64, stream_id: u64) -> Self {
        Rng { seed, stream_id }
    }

    pub const fn from_seed(seed: u64) -> Self {
        Rng::new(seed, 0)
    }

    /// Child stream keyed by `tag`. Children of distinct tags are distinct
    /// streams of the same seed; derivation is a pure function of the inputs.
    pub fn derive(self, tag: u64) -> Self {
        let mixed = splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(0xA076_1D64_78BD_642F)));
        Rng {
            seed: self.seed,
            stream_id: mixed,
        }
    }

    pub fn generator(self) -> ChaCha8Rng {
        let mut g = ChaCha8Rng::seed_from_u64(self.seed);
        g.set_stream(self.stream_id);
        g
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
