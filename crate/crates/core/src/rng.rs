//! Labelled random substreams derived from one root seed.
//!
//! Every consumer (geometry, orientations, NLoS draws, SIC shuffles, random
//! starts) draws from its own stream keyed by a fixed label, so adding a new
//! consumer never shifts the numbers seen by the existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const GEOMETRY: &str = "geometry";
pub const ORIENTATION: &str = "orientation";
pub const NLOS: &str = "nlos";
pub const SIC_ORDER: &str = "sic-order";
pub const STARTS: &str = "starts";
pub const TRIAL: &str = "trial";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedStreams {
    root: u64,
}

impl SeedStreams {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn stream(&self, label: &str) -> StreamRng {
        self.indexed_stream(label, 0)
    }

    pub fn indexed_stream(&self, label: &str, index: u64) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.derive_seed(label, index))
    }

    /// A child seed, stable across platforms and releases.
    pub fn derive_seed(&self, label: &str, index: u64) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for b in label.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        splitmix64(splitmix64(self.root ^ h).wrapping_add(index))
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
