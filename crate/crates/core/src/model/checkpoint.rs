//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "ARCFXCKP"
//! version    u32
//! config     u32 length + UTF-8 JSON of the ModelConfig
//! meta       u32 length + UTF-8 JSON object (free-form run metadata)
//! count      u32 number of tensors
//! tensor     u16 name length + name, u32 rank, rank × u64 dims,
//!            product(dims) × f64
//! digest     32 bytes SHA-256 of everything above
//! ```
//!
//! Tensors appear in the fixed order of `ModelParams::tensors`.

use std::path::{Path, PathBuf};

use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::{init_params, ModelConfig, ModelParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"ARCFXCKP";
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub meta: Map<String, Value>,
}

impl Checkpoint {
    pub fn new(params: ModelParams) -> Self {
        Self {
            params,
            meta: Map::new(),
        }
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(&ckpt.params.config).expect("config serializes");
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    let meta = serde_json::to_vec(&ckpt.meta).expect("meta serializes");
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    let tensors = ckpt.params.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &dim in &t.shape {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for v in t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                what: "checkpoint",
                expected: (self.pos + n) as u64,
                found: self.bytes.len() as u64,
            }),
        }
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn malformed(reason: impl Into<String>) -> Error {
    Error::Malformed {
        what: "checkpoint",
        reason: reason.into(),
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    read_checkpoint_from(bytes, Path::new("<memory>"))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn read_checkpoint_from(all: &[u8], path: &Path) -> Result<Checkpoint> {
    let header = MAGIC.len() + 4;
    if all.len() < header + DIGEST_LEN {
        return Err(Error::Truncated {
            what: "checkpoint",
            expected: (header + DIGEST_LEN) as u64,
            found: all.len() as u64,
        });
    }
    if &all[..MAGIC.len()] != MAGIC {
        return Err(malformed("bad magic"));
    }
    let version = u32::from_le_bytes(all[MAGIC.len()..header].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            what: "checkpoint",
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let (bytes, stored) = all.split_at(all.len() - DIGEST_LEN);
    let actual = Sha256::digest(bytes);
    if actual.as_slice() != stored {
        return Err(Error::ChecksumMismatch {
            path: PathBuf::from(path),
            expected: hex(stored),
            actual: hex(&actual),
        });
    }
    let mut r = Reader { bytes, pos: header };
    let cfg_len = r.u32()? as usize;
    let config: ModelConfig =
        serde_json::from_slice(r.take(cfg_len)?).map_err(|e| malformed(format!("config: {e}")))?;
    config.validate()?;
    let meta_len = r.u32()? as usize;
    let meta: Map<String, Value> =
        serde_json::from_slice(r.take(meta_len)?).map_err(|e| malformed(format!("meta: {e}")))?;

    let mut params = init_params(&config, 0);
    let expected: Vec<(String, Vec<usize>)> = params
        .tensors()
        .into_iter()
        .map(|t| (t.name, t.shape))
        .collect();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(malformed(format!(
            "{count} tensors stored, config implies {}",
            expected.len()
        )));
    }
    for (i, (name, shape)) in expected.iter().enumerate() {
        let name_len = r.u16()? as usize;
        let stored = r.take(name_len)?;
        if stored != name.as_bytes() {
            return Err(malformed(format!(
                "tensor {i} is {:?}, expected {name}",
                String::from_utf8_lossy(stored)
            )));
        }
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if &dims != shape {
            return Err(malformed(format!("{name} has shape {dims:?}, expected {shape:?}")));
        }
        let slot = params.slot_mut(i);
        for v in slot.iter_mut() {
            *v = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        }
    }
    if r.pos != bytes.len() {
        return Err(malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { params, meta })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint_from(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadKind;

    fn small() -> Checkpoint {
        let cfg = ModelConfig {
            d_model: 4,
            n_state: 2,
            n_blocks: 2,
            k_fas: 4,
            head_kind: HeadKind::Mlp,
            ..Default::default()
        };
        let mut c = Checkpoint::new(init_params(&cfg, 9));
        c.meta.insert("test_accuracy".into(), Value::from(0.5));
        c
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let c = small();
        let bytes = write_checkpoint(&c);
        let back = read_checkpoint(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(write_checkpoint(&back), bytes);
    }

    #[test]
    fn typed_errors() {
        let bytes = write_checkpoint(&small());
        assert!(matches!(read_checkpoint(&bytes[..20]), Err(Error::Truncated { .. })));
        assert!(matches!(
            read_checkpoint(&bytes[..bytes.len() - 3]),
            Err(Error::ChecksumMismatch { .. })
        ));
        let mut flipped = bytes.clone();
        let mid = bytes.len() / 2;
        flipped[mid] ^= 0x10;
        assert!(matches!(read_checkpoint(&flipped), Err(Error::ChecksumMismatch { .. })));
        let mut v = bytes.clone();
        v[8] = 2;
        assert!(matches!(
            read_checkpoint(&v),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
        let mut m = bytes.clone();
        m[0] = b'X';
        assert!(matches!(read_checkpoint(&m), Err(Error::Malformed { .. })));
        let mut t = bytes;
        t.push(0);
        assert!(matches!(read_checkpoint(&t), Err(Error::ChecksumMismatch { .. })));
    }
}
