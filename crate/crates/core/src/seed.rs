//! Named derivation of independent random streams from one master seed.
//!
//! Every random stream in the toolkit is a ChaCha8 generator seeded with
//! `derive_seed(master, path)`, where `path` is a `/`-separated label such as
//! `series/W17/trainer/exp/p20`. The child seed is the first eight bytes
//! (little endian) of `SHA-256(master.to_le_bytes() || path.as_bytes())`.
//!
//! Streams therefore depend only on the master seed and their label, never on
//! the order in which they are requested, which keeps concurrent runs and
//! partial reruns reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// The generator used for every seeded stream.
pub type Stream = ChaCha8Rng;

pub fn derive_seed(master: u64, path: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(path.as_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

/// A generator seeded directly with `seed`.
pub fn stream_from_seed(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A generator for the child stream `path` of `master`.
pub fn derive_stream(master: u64, path: &str) -> Stream {
    stream_from_seed(derive_seed(master, path))
}
