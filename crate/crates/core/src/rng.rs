//! Seed derivation. Every random draw flows from one master seed; each stream
//! gets its own ChaCha generator keyed by `master ⊕ stream_index`, and distinct
//! uses of that stream (simulation, noise, Monte Carlo, ...) select distinct
//! ChaCha stream ids so they never share a keystream.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PURPOSE_SHIFT: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Simulate,
    Noise {
        epoch: u64,
    },
    MonteCarlo {
        epoch: u64,
    },
    Predict,
    Shuffle {
        epoch: u64,
    },
    Replication {
        index: u64,
    },
    /// Random model construction and parameter initialisation.
    Init,
}

impl Purpose {
    fn stream_id(self) -> u64 {
        let (tag, sub) = match self {
            Purpose::Simulate => (0, 0),
            Purpose::Noise { epoch } => (1, epoch),
            Purpose::MonteCarlo { epoch } => (2, epoch),
            Purpose::Predict => (3, 0),
            Purpose::Shuffle { epoch } => (4, epoch),
            Purpose::Replication { index } => (5, index),
            Purpose::Init => (6, 0),
        };
        (tag << PURPOSE_SHIFT) | (sub & ((1 << PURPOSE_SHIFT) - 1))
    }
}

/// Generator for one stream and one purpose.
pub fn stream_rng(master_seed: u64, stream_index: usize, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed ^ stream_index as u64);
    rng.set_stream(purpose.stream_id());
    rng
}

/// A seed for an independent sub-experiment.
pub fn derive_seed(master_seed: u64, purpose: Purpose) -> u64 {
    stream_rng(master_seed, 0, purpose).next_u64()
}

/// Uniform draw on the open interval (0, 1) from the top 53 bits of a `u64`.
#[inline]
pub fn open_unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Exponential waiting time with the given rate by inverse CDF.
#[inline]
pub fn exp_draw<R: RngCore + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    -open_unit(rng).ln() / rate
}
