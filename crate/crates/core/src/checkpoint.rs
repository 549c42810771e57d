//! Binary checkpoint format.
//!
//! ```text
//! "WSMT" | version: u32 | header_len: u32 | header (JSON) | payload | crc32: u32
//! ```
//! All integers are little-endian. The header carries the network
//! configuration, training counters and a manifest of every tensor
//! (name, shape, byte offset into the payload). The payload is the tensors'
//! values as little-endian `f32`, in manifest order. The trailing CRC-32
//! covers every preceding byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::siamese::{Network, NetworkConfig};

pub const MAGIC: &[u8; 4] = b"WSMT";
pub const FORMAT_VERSION: u32 = 1;

/// Seed of the pair-sampling stream and the epoch it would draw next.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub next_epoch: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network<f32>,
    /// Optimizer steps taken.
    pub step: u64,
    pub epoch: usize,
    pub rng: RngState,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    network: NetworkConfig,
    step: u64,
    epoch: usize,
    rng: RngState,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut payload = Vec::new();
        for (name, t, _) in self.network.named_tensors() {
            tensors.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
                offset: payload.len() as u64,
            });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = serde_json::to_vec(&Header {
            network: self.network.config.clone(),
            step: self.step,
            epoch: self.epoch,
            rng: self.rng,
            tensors,
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Corrupt("file shorter than the fixed header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Corrupt("bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(Error::Corrupt(
                "checksum mismatch (truncated or modified)".into(),
            ));
        }
        let header_len = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
        let payload_start = 12 + header_len;
        if payload_start > body.len() {
            return Err(Error::Corrupt("header runs past end of file".into()));
        }
        let header: Header = serde_json::from_slice(&body[12..payload_start])
            .map_err(|e| Error::Corrupt(format!("unreadable header: {e}")))?;
        let payload = &body[payload_start..];

        let mut network = Network::<f32>::build(header.network, 0)?;
        let mut slots = network.named_tensors_mut();
        if slots.len() != header.tensors.len() {
            return Err(Error::Corrupt(format!(
                "manifest lists {} tensors, network has {}",
                header.tensors.len(),
                slots.len()
            )));
        }
        for ((name, slot), entry) in slots.iter_mut().zip(&header.tensors) {
            if *name != entry.name || slot.shape() != entry.shape.as_slice() {
                return Err(Error::Corrupt(format!(
                    "manifest entry '{}' {:?} does not match '{}' {:?}",
                    entry.name,
                    entry.shape,
                    name,
                    slot.shape()
                )));
            }
            let start = entry.offset as usize;
            let end = start + 4 * slot.len();
            let raw = payload
                .get(start..end)
                .ok_or_else(|| Error::Corrupt(format!("payload for '{name}' is truncated")))?;
            for (dst, chunk) in slot.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        Ok(Self {
            network,
            step: header.step,
            epoch: header.epoch,
            rng: header.rng,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::siamese::HeadSpec;
    use crate::task::Task;

    fn sample() -> Checkpoint {
        let cfg = NetworkConfig {
            input_channels: 2,
            block_channels: vec![4, 4],
            kernel: 3,
            heads: vec![HeadSpec {
                task: Task::Activity,
                dim: 3,
            }],
            ..NetworkConfig::default()
        };
        let mut network = Network::build(cfg, 17).unwrap();
        network.blocks[0].layers[0].norm.running_mean.data_mut()[1] = 0.25;
        Checkpoint {
            network,
            step: 42,
            epoch: 3,
            rng: RngState {
                seed: 9,
                next_epoch: 4,
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.wsmt");
        save_checkpoint(&path, &ck).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ck);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [3, 15, bytes.len() / 2, bytes.len() - 1] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Corrupt(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn flipped_byte_is_corrupt() {
        let mut bytes = sample().to_bytes().unwrap();
        let mid = bytes.len() - 20;
        bytes[mid] ^= 0x40;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Corrupt(_))
        ));
    }

    #[test]
    fn other_version_rejected() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4..8].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Version { found: 0, .. })
        ));
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Corrupt(_))
        ));
    }
}
