//! Versioned binary checkpoint records.
//!
//! Layout (all integers and floats little endian):
//!
//! | offset | size | field                                        |
//! |--------|------|----------------------------------------------|
//! | 0      | 4    | magic `DPCK`                                 |
//! | 4      | 4    | format version (u32, currently 1)            |
//! | 8      | 4    | lag (u32)                                    |
//! | 12     | 4    | hidden1 (u32)                                |
//! | 16     | 4    | hidden2 (u32)                                |
//! | 20     | 1    | first head activation (0 id, 1 tanh, 2 sigm) |
//! | 21     | 1    | second head activation                       |
//! | 22     | 2    | reserved, zero                               |
//! | 24     | 8    | dropout rate (f64)                           |
//! | 32     | 8    | segment index, 1-based (u64)                 |
//! | 40     | 8    | iteration count at save (u64)                |
//! | 48     | 8    | learning rate of the segment (f64)           |
//! | 56     | 8    | training seed (u64)                          |
//! | 64     | 8    | parameter count n (u64)                      |
//! | 72     | 8n   | parameters (f64) in [`Layout`] order         |
//! | 72+8n  | 32   | SHA-256 of every preceding byte              |
//!
//! [`Layout`]: super::Layout

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Activation, Architecture, LstmError, LstmParams};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DPCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 72;
const DIGEST_LEN: usize = 32;

/// A parameter snapshot taken at the end of one schedule segment.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: LstmParams,
    pub segment_index: usize,
    pub iteration: u64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Checkpoint {
    pub fn predict(&self, window: &[f64]) -> Result<f64, LstmError> {
        self.params.predict(window)
    }

    /// Recursive `horizon`-step forecast from `window`.
    pub fn forecast(&self, window: &[f64], horizon: usize) -> Result<Vec<f64>, LstmError> {
        let arch = *self.params.arch();
        if window.len() != arch.lag {
            return Err(LstmError::ShapeMismatch {
                expected: arch.lag,
                got: window.len(),
            });
        }
        let mut cache = super::ForwardCache::new(&arch);
        let mut failure = None;
        let out = crate::series::recursive_forecast(
            |w| match super::forward(&self.params, w, super::Mode::Eval, &mut cache) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            },
            window,
            horizon,
        );
        match failure {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let arch = self.params.arch();
        let values = self.params.values();
        let mut buf = Vec::with_capacity(HEADER_LEN + 8 * values.len() + DIGEST_LEN);
        buf.extend_from_slice(&CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(arch.lag as u32).to_le_bytes());
        buf.extend_from_slice(&(arch.hidden1 as u32).to_le_bytes());
        buf.extend_from_slice(&(arch.hidden2 as u32).to_le_bytes());
        buf.push(arch.head[0].code());
        buf.push(arch.head[1].code());
        buf.extend_from_slice(&[0, 0]);
        buf.extend_from_slice(&arch.dropout.to_le_bytes());
        buf.extend_from_slice(&(self.segment_index as u64).to_le_bytes());
        buf.extend_from_slice(&self.iteration.to_le_bytes());
        buf.extend_from_slice(&self.learning_rate.to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LstmError> {
        let corrupt = |msg: &str| LstmError::CorruptFile(msg.to_string());
        if bytes.len() < 8 {
            return Err(corrupt("file shorter than its header"));
        }
        if bytes[..4] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(LstmError::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        if bytes.len() < HEADER_LEN + DIGEST_LEN {
            return Err(corrupt("file shorter than its header"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }

        let u32_at = |o: usize| u32::from_le_bytes(body[o..o + 4].try_into().unwrap()) as usize;
        let u64_at = |o: usize| u64::from_le_bytes(body[o..o + 8].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(body[o..o + 8].try_into().unwrap());

        let head = [
            Activation::from_code(body[20]).ok_or_else(|| corrupt("unknown activation code"))?,
            Activation::from_code(body[21]).ok_or_else(|| corrupt("unknown activation code"))?,
        ];
        let arch = Architecture {
            lag: u32_at(8),
            hidden1: u32_at(12),
            hidden2: u32_at(16),
            dropout: f64_at(24),
            head,
        };
        arch.validate()
            .map_err(|_| corrupt("invalid architecture header"))?;
        let count = u64_at(64) as usize;
        if count != arch.layout().total || body.len() != HEADER_LEN + 8 * count {
            return Err(corrupt("parameter count does not match architecture"));
        }
        let values = body[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            params: LstmParams::from_values(arch, values)?,
            segment_index: u64_at(32) as usize,
            iteration: u64_at(40),
            learning_rate: f64_at(48),
            seed: u64_at(56),
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), LstmError> {
    fs::write(path, checkpoint.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, LstmError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
