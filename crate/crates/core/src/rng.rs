//! Seeded generator plumbing shared by data generation, filtering, and
//! training.
//!
//! Everything that consumes randomness takes an explicit generator so runs
//! are reproducible from a single `u64` seed, and training can snapshot the
//! exact stream position into a checkpoint and resume bit-identically.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The one generator type used wherever a seed appears.
pub type Rng = ChaCha8Rng;

/// Build a generator from a plain integer seed.
pub fn from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Serializable snapshot of a generator: its 256-bit seed plus the stream
/// position, enough to restore the exact point in the random stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> Result<Rng> {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_word_pos(self.word_pos);
        if rng.get_word_pos() != self.word_pos {
            return Err(Error::State(format!(
                "could not restore generator position {}",
                self.word_pos
            )));
        }
        Ok(rng)
    }
}
