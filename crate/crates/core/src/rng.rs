//! Reproducible random streams.
//!
//! A stream is addressed by `(seed, stream_id)` and backed by ChaCha8, whose
//! 64-bit stream selector gives independent counter-based substreams. Every
//! stochastic routine in the crate derives its substreams from a parent stream
//! plus a purpose tag and an index, so results do not depend on how work is
//! split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

/// Purpose tags used when deriving substreams.
pub mod purpose {
    pub const SIMULATION: u64 = 1;
    pub const EML_BRIDGE: u64 = 2;
    pub const SML: u64 = 4;
    pub const FORECAST: u64 = 5;
    pub const RESTART: u64 = 6;
    pub const DATA: u64 = 7;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    /// Child stream for `(purpose, index)`; distinct inputs give distinct ids.
    pub fn derive(&self, purpose: u64, index: u64) -> RngStream {
        let id = splitmix(self.stream ^ splitmix(purpose.wrapping_mul(0x1000_0000_01b3) ^ splitmix(index)));
        RngStream { seed: self.seed, stream: id }
    }

    pub fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    pub fn normals(&self) -> NormalSource {
        NormalSource { rng: self.generator() }
    }
}

/// Standard-normal draws from one stream.
pub struct NormalSource {
    rng: ChaCha8Rng,
}

impl NormalSource {
    #[inline]
    pub fn next(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for o in out {
            *o = self.next();
        }
    }
}
