//! Keyed random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream whose
//! 256-bit key is built from `(master_seed, purpose, cell, trial)`. ChaCha is a
//! counter-based generator: the output block is a pure function of key and
//! counter, so a stream can be re-created anywhere, in any order, on any
//! thread, with identical results. Distinct purpose tags keep process-sampling
//! and noise streams disjoint even for equal cell and trial indices.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Purpose {
    /// Threshold-voltage deviations of one cell.
    Sampling,
    /// Thermal-noise sources of one power-up trial.
    Noise,
    /// Random-baseline cell selection.
    Selection,
}

impl Purpose {
    fn tag(self) -> u64 {
        // ASCII mnemonics, fixed forever so stored seeds stay meaningful.
        match self {
            Purpose::Sampling => u64::from_le_bytes(*b"sampling"),
            Purpose::Noise => u64::from_le_bytes(*b"th-noise"),
            Purpose::Selection => u64::from_le_bytes(*b"select\0\0"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub master_seed: u64,
    pub purpose: Purpose,
    pub cell: u64,
    pub trial: u64,
}

impl StreamKey {
    pub fn new(master_seed: u64, purpose: Purpose, cell: u64, trial: u64) -> Self {
        StreamKey {
            master_seed,
            purpose,
            cell,
            trial,
        }
    }

    pub fn seed_bytes(&self) -> [u8; 32] {
        let mut seed = [0u8; 32];
        seed[0..8].copy_from_slice(&self.master_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&self.purpose.tag().to_le_bytes());
        seed[16..24].copy_from_slice(&self.cell.to_le_bytes());
        seed[24..32].copy_from_slice(&self.trial.to_le_bytes());
        seed
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.seed_bytes())
    }
}
