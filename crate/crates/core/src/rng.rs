//! Deterministic random streams, one per (seed, run, agent, purpose).
//!
//! The ChaCha key is built from the batch seed and the run index; the ChaCha
//! stream id separates agents and purposes. Adding a disturbance to one agent
//! therefore never shifts another agent's process-noise draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamPurpose {
    ProcessNoise = 0,
    Disturbance = 1,
    MessageLoss = 2,
}

pub fn stream(seed: u64, run: u64, agent: usize, purpose: StreamPurpose) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&run.to_le_bytes());
    key[16..24].copy_from_slice(b"priofd\0\0");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(((agent as u64) << 8) | purpose as u64);
    rng
}
