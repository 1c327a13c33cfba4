//! Counter-based seeding: every image gets its own random stream derived
//! from `(master seed, stream index, purpose)`, so results never depend on
//! which worker processed which image.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Random stream identified by a master seed and a stream index.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> SeededRng {
        SeededRng::with_purpose(seed, stream, "")
    }

    /// Independent sub-stream of `(seed, stream)` keyed by a label, e.g.
    /// parameter sampling vs. noise injection.
    pub fn with_purpose(seed: u64, stream: u64, purpose: &str) -> SeededRng {
        let mut h = Sha256::new();
        h.update(b"lowlight-rng-v1");
        h.update(seed.to_le_bytes());
        h.update(stream.to_le_bytes());
        h.update(purpose.as_bytes());
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        SeededRng {
            seed,
            stream,
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }
}

impl RngCore for SeededRng {
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
