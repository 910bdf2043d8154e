//! Versioned binary checkpoint container; the byte layout is documented in
//! `docs/checkpoint.md`.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RLTRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// The config a run was started with plus every named array it needs to continue.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let text = self.config.to_toml_string();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config.hash());
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, values) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Parses a container, refusing it if it was written for a different
    /// config than `expected` (when given).
    pub fn from_bytes(bytes: &[u8], expected: Option<&ExperimentConfig>) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::CheckpointCorrupt("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        if bytes.len() < 32 {
            return Err(Error::CheckpointCorrupt("truncated".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::CheckpointCorrupt("checksum mismatch".into()));
        }
        r.bytes = body;
        let hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        if let Some(cfg) = expected {
            if cfg.hash() != hash {
                return Err(Error::CheckpointConfigMismatch {
                    found: hex::encode(hash),
                    expected: cfg.hash_hex(),
                });
            }
        }
        let text_len = r.u64()? as usize;
        let text = std::str::from_utf8(r.take(text_len)?)
            .map_err(|_| Error::CheckpointCorrupt("config text is not UTF-8".into()))?;
        let config = ExperimentConfig::from_toml_str(text)
            .map_err(|e| Error::CheckpointCorrupt(format!("embedded config: {e}")))?;
        if config.hash() != hash {
            return Err(Error::CheckpointCorrupt("embedded config does not match its hash".into()));
        }
        let count = r.u64()?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name_len = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::CheckpointCorrupt("array name is not UTF-8".into()))?
                .to_string();
            let len = r.u64()? as usize;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::CheckpointCorrupt("array too long".into()))?)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.insert(name, values);
        }
        if r.pos != r.bytes.len() {
            return Err(Error::CheckpointCorrupt("trailing bytes".into()));
        }
        Ok(Self { config, params })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CheckpointCorrupt("truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, expected: Option<&ExperimentConfig>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?, expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut params = ParamStore::new();
        params.insert("a", vec![1.0, -2.5, f64::MIN_POSITIVE]);
        params.put_u64("n", 77);
        Checkpoint {
            config: ExperimentConfig::default(),
            params,
        }
    }

    #[test]
    fn bytes_round_trip() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes(), Some(&ck.config)).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn distinct_failures_are_distinguished() {
        let ck = sample();
        let bytes = ck.to_bytes();

        let mut other = ck.config.clone();
        other.run.session_seed += 1;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes, Some(&other)),
            Err(Error::CheckpointConfigMismatch { .. })
        ));

        let mut versioned = bytes.clone();
        versioned[8..12].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&versioned, None),
            Err(Error::CheckpointVersion { found: 9, .. })
        ));

        let mut flipped = bytes.clone();
        let mid = bytes.len() / 2;
        flipped[mid] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&flipped, None), Err(Error::CheckpointCorrupt(_))));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..20], None), Err(Error::CheckpointCorrupt(_))));
        assert!(matches!(Checkpoint::from_bytes(b"garbage!", None), Err(Error::CheckpointCorrupt(_))));
    }
}
