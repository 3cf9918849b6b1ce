//! Seeded random streams.
//!
//! Every random draw in a replicate comes from a ChaCha8 stream keyed by
//! `(seed, replicate, stream, index)`. The key is written verbatim into the
//! 256-bit ChaCha key, so distinct tuples never share a stream and any draw can
//! be regenerated without replaying the others. Picard iteration relies on this:
//! a candidate's marks and mass path depend only on its own key.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Named substreams of a replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    /// Gaussian increments of the stochastic flow.
    Flow = 1,
    /// Excursion mass paths, one key per excursion id.
    Mass = 2,
    /// Initial cohort and base-rate immigration births, one key per time window.
    Immigration = 3,
    /// Higher thinning layers and their marks, one key per (layer, window).
    Thinning = 4,
    /// Harness-level draws that are not part of a trajectory.
    Auxiliary = 5,
}

/// Index reserved for the initial-cohort draw inside [`Stream::Immigration`].
pub const INITIAL_COHORT_INDEX: u64 = u64::MAX;

/// Root of all streams for one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub replicate: u64,
    /// Mixed into the thinning stream only; nonzero values give an independent
    /// set of thinning layers with every other stream unchanged.
    pub thinning_salt: u64,
}

impl StreamKey {
    pub fn new(seed: u64, replicate: u64) -> Self {
        Self {
            seed,
            replicate,
            thinning_salt: 0,
        }
    }

    pub fn with_thinning_salt(mut self, salt: u64) -> Self {
        self.thinning_salt = salt;
        self
    }

    pub fn rng(&self, stream: Stream, index: u64) -> SimRng {
        let tag = match stream {
            Stream::Thinning => (stream as u64) ^ self.thinning_salt.rotate_left(8),
            _ => stream as u64,
        };
        derive_rng(self.seed, self.replicate, tag, index)
    }
}

/// Builds the ChaCha8 generator for the raw key `(seed, replicate, tag, index)`.
pub fn derive_rng(seed: u64, replicate: u64, tag: u64, index: u64) -> SimRng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&replicate.to_le_bytes());
    key[16..24].copy_from_slice(&tag.to_le_bytes());
    key[24..32].copy_from_slice(&index.to_le_bytes());
    SimRng::from_seed(key)
}
