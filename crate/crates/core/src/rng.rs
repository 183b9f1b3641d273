//! Seeded generator whose exact stream position survives a checkpoint.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Stream id for the evolution control path. Dataset subsampling uses stream 0
/// of the same seed, so the two never share random numbers.
const CONTROL_STREAM: u64 = 1;

#[derive(Clone, Debug)]
pub struct RunRng {
    inner: ChaCha8Rng,
}

/// JSON-friendly snapshot of a [`RunRng`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// 32-byte ChaCha key, hex encoded.
    pub seed: String,
    pub stream: u64,
    /// 128-bit word position as a decimal string (JSON numbers are not wide enough).
    pub word_pos: String,
}

#[derive(Debug, thiserror::Error)]
#[error("invalid rng state: {0}")]
pub struct RngStateError(String);

impl RunRng {
    pub fn from_seed(seed: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(CONTROL_STREAM);
        Self { inner }
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: hex::encode(self.inner.get_seed()),
            stream: self.inner.get_stream(),
            word_pos: self.inner.get_word_pos().to_string(),
        }
    }

    pub fn from_state(state: &RngState) -> Result<Self, RngStateError> {
        let bytes = hex::decode(&state.seed).map_err(|e| RngStateError(e.to_string()))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| RngStateError("seed must be 32 bytes".into()))?;
        let word_pos: u128 = state
            .word_pos
            .parse()
            .map_err(|_| RngStateError(format!("bad word position {:?}", state.word_pos)))?;
        let mut inner = ChaCha8Rng::from_seed(seed);
        inner.set_stream(state.stream);
        inner.set_word_pos(word_pos);
        Ok(Self { inner })
    }
}

impl RngCore for RunRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Generator for one-off seeded shuffles (dataset subsampling).
pub fn subsample_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
