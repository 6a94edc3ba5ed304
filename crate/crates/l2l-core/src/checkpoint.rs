//! Single-file checkpoint archive: JSON header (model kind, config, seed,
//! per-epoch history CSV, tensor index) followed by a raw little-endian f32
//! blob and a trailing SHA-256 of everything before it. Round trips are
//! bit-identical; truncation or bit flips fail the hash check before any
//! tensor is handed out.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::TensorEntry;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"L2LCKPT\x01";

pub const KIND_RESVAE: &str = "resvae";
pub const KIND_PIX2PIX: &str = "pix2pix";
pub const KIND_ANOMALY_AE: &str = "anomaly_ae";

/// Serialized model: weights, full training configuration, RNG seed and
/// training history.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model_kind: String,
    pub format_version: u32,
    pub seed: u64,
    pub config: serde_json::Value,
    pub history_csv: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model_kind: String,
    seed: u64,
    config: serde_json::Value,
    history_csv: String,
    tensors: Vec<TensorMeta>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
    len: usize,
}

impl Checkpoint {
    pub fn new(model_kind: &str, seed: u64, config: serde_json::Value) -> Self {
        Checkpoint {
            model_kind: model_kind.to_string(),
            format_version: FORMAT_VERSION,
            seed,
            config,
            history_csv: String::new(),
            tensors: Vec::new(),
        }
    }

    /// Deserialize the config section into its typed form.
    pub fn config_as<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.config.clone())
            .map_err(|e| Error::CheckpointFormat(format!("bad config section: {e}")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.model_kind != kind {
            return Err(Error::WrongModelKind {
                expected: kind.to_string(),
                got: self.model_kind.clone(),
            });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            format_version: self.format_version,
            model_kind: self.model_kind.clone(),
            seed: self.seed,
            config: self.config.clone(),
            history_csv: self.history_csv.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorMeta {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    len: t.data.len(),
                })
                .collect(),
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| Error::CheckpointFormat(format!("header encode: {e}")))?;

        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header_json);
        for t in &self.tensors {
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&buf);
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        w.write_all(&buf).map_err(|e| Error::io(path, e))?;
        w.write_all(&digest).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < MAGIC.len() + 8 + 32 {
            return Err(Error::CheckpointCorrupt {
                path: path.to_path_buf(),
                message: "file too short".into(),
            });
        }
        let (body, stored_hash) = bytes.split_at(bytes.len() - 32);
        let digest = Sha256::digest(body);
        if digest.as_slice() != stored_hash {
            return Err(Error::CheckpointCorrupt {
                path: path.to_path_buf(),
                message: "hash mismatch".into(),
            });
        }
        if &body[..8] != MAGIC {
            return Err(Error::CheckpointFormat("bad magic".into()));
        }
        let header_len = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
        if body.len() < 16 + header_len {
            return Err(Error::CheckpointCorrupt {
                path: path.to_path_buf(),
                message: "truncated header".into(),
            });
        }
        let header: Header = serde_json::from_slice(&body[16..16 + header_len])
            .map_err(|e| Error::CheckpointFormat(format!("header decode: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: header.format_version,
                supported: FORMAT_VERSION,
            });
        }
        let mut offset = 16 + header_len;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for meta in header.tensors {
            let nbytes = meta.len * 4;
            if body.len() < offset + nbytes {
                return Err(Error::CheckpointCorrupt {
                    path: path.to_path_buf(),
                    message: format!("truncated tensor {}", meta.name),
                });
            }
            let data: Vec<f32> = body[offset..offset + nbytes]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset += nbytes;
            tensors.push(TensorEntry::new(meta.name, meta.shape, data));
        }
        Ok(Checkpoint {
            model_kind: header.model_kind,
            format_version: header.format_version,
            seed: header.seed,
            config: header.config,
            history_csv: header.history_csv,
            tensors,
        })
    }
}

/// Tensor lookup used when loading weights into a network.
pub struct EntryMap {
    map: BTreeMap<String, TensorEntry>,
}

impl EntryMap {
    pub fn new(entries: &[TensorEntry]) -> Self {
        EntryMap {
            map: entries.iter().map(|t| (t.name.clone(), t.clone())).collect(),
        }
    }

    pub fn take_into(&mut self, name: &str, dst: &mut [f32]) -> Result<()> {
        let entry = self
            .map
            .remove(name)
            .ok_or_else(|| Error::CheckpointFormat(format!("missing tensor {name}")))?;
        if entry.data.len() != dst.len() {
            return Err(Error::CheckpointFormat(format!(
                "tensor {name} has {} values, expected {}",
                entry.data.len(),
                dst.len()
            )));
        }
        dst.copy_from_slice(&entry.data);
        Ok(())
    }

    /// Error if any tensor in the archive was never consumed.
    pub fn finish(self) -> Result<()> {
        if let Some(name) = self.map.keys().next() {
            return Err(Error::CheckpointFormat(format!("unexpected tensor {name}")));
        }
        Ok(())
    }
}

/// SHA-256 of a file, hex-encoded. Used for manifest content hashes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut f, &mut hasher).map_err(|e| Error::io(path, e))?;
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ckpt = Checkpoint::new(KIND_RESVAE, 42, serde_json::json!({"beta": 75.0}));
        ckpt.history_csv = "epoch,loss\n0,1.0\n".into();
        ckpt.tensors = vec![
            TensorEntry::new("a.w", vec![2, 3], vec![1.0, -2.5, 0.0, 3.25, 1e-20, f32::MIN_POSITIVE]),
            TensorEntry::new("a.b", vec![2], vec![0.5, -0.5]),
        ];
        ckpt
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ckpt = sample();
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.model_kind, ckpt.model_kind);
        assert_eq!(back.seed, ckpt.seed);
        assert_eq!(back.history_csv, ckpt.history_csv);
        assert_eq!(back.tensors, ckpt.tensors);
        for (a, b) in back.tensors[0].data.iter().zip(ckpt.tensors[0].data.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        sample().save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(Error::CheckpointCorrupt { .. })
        ));
    }

    #[test]
    fn bit_flip_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        sample().save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(Error::CheckpointCorrupt { .. })
        ));
    }

    #[test]
    fn kind_guard() {
        let ckpt = sample();
        assert!(ckpt.expect_kind(KIND_RESVAE).is_ok());
        assert!(matches!(
            ckpt.expect_kind(KIND_PIX2PIX),
            Err(Error::WrongModelKind { .. })
        ));
    }
}
