//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `BBCK`, `u16` version, `u32` length and
//! JSON bytes of the model config, `u32` tensor count, then per tensor a
//! `u16` name length, the UTF-8 name, a `u8` rank, `u32` dims and raw `f32`
//! values. A SHA-256 digest of everything before it closes the file.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{write_atomic, CliError, Result};
use crate::numerics::{ParamStore, Tensor};
use crate::transformer::{ModelConfig, PolicyModel};

pub const MAGIC: &[u8; 4] = b"BBCK";
pub const VERSION: u16 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Checkpoint(msg.into())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated checkpoint"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn from_model(model: &PolicyModel) -> Self {
        Self {
            config: *model.config(),
            tensors: model.params().iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect(),
        }
    }

    pub fn into_model(self) -> Result<PolicyModel> {
        let mut store = ParamStore::new();
        for (name, t) in self.tensors {
            store.insert(name, t);
        }
        Ok(PolicyModel::from_parts(self.config, store)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = serde_json::to_vec(&self.config)?;
        b.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        b.extend_from_slice(&cfg);
        b.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let name_len = u16::try_from(name.len()).map_err(|_| bad(format!("tensor name too long: {name}")))?;
            b.extend_from_slice(&name_len.to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.push(t.rank() as u8);
            for &d in t.shape() {
                b.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&b);
        b.extend_from_slice(&digest);
        Ok(b)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 2 + DIGEST_LEN {
            return Err(bad("file too short to be a checkpoint"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        let mut c = Cursor { buf: body, pos: 0 };
        if c.take(4)? != MAGIC {
            return Err(bad("bad magic; not a checkpoint"));
        }
        let version = c.u16()?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("digest mismatch; checkpoint is corrupt"));
        }
        let cfg_len = c.u32()? as usize;
        let config: ModelConfig = serde_json::from_slice(c.take(cfg_len)?)?;
        let count = c.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = c.u16()? as usize;
            let name = std::str::from_utf8(c.take(len)?).map_err(|_| bad("tensor name is not UTF-8"))?.to_string();
            let rank = c.u8()? as usize;
            let shape = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = c.take(numel.checked_mul(4).ok_or_else(|| bad("tensor too large"))?)?;
            let data = raw.chunks_exact(4).map(|w| f32::from_le_bytes(w.try_into().unwrap())).collect();
            let t = Tensor::new(shape, data).map_err(|e| bad(format!("tensor {name}: {e}")))?;
            tensors.push((name, t));
        }
        if c.pos != body.len() {
            return Err(bad("trailing bytes after tensor table"));
        }
        Ok(Self { config, tensors })
    }

    pub fn write(&self, mut out: impl Write) -> Result<()> {
        out.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(mut input: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        input.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

pub fn save_model(path: &Path, model: &PolicyModel) -> Result<()> {
    write_atomic(path, &Checkpoint::from_model(model).to_bytes()?)
}

pub fn load_model(path: &Path) -> Result<PolicyModel> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Checkpoint::from_bytes(&bytes)?.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::TokenBatch;

    fn model() -> PolicyModel {
        let cfg = ModelConfig {
            n_layers: 1,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            ..ModelConfig::desk()
        };
        PolicyModel::init(cfg, 5).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let bytes = Checkpoint::from_model(&m).to_bytes().unwrap();
        assert_eq!(&bytes[..4], MAGIC);
        let back = Checkpoint::from_bytes(&bytes).unwrap().into_model().unwrap();
        assert_eq!(back, m);
        let batch = TokenBatch::from_rows(&[vec![1, 2, 3, 4]]).unwrap();
        let (a, b) = (m.logits(&batch).unwrap(), back.logits(&batch).unwrap());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = Checkpoint::from_model(&model()).to_bytes().unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CliError::Checkpoint(m)) if m.contains("digest")));
        assert!(Checkpoint::from_bytes(b"NOPE").is_err());
        let mut v = Checkpoint::from_model(&model()).to_bytes().unwrap();
        v[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&v), Err(CliError::Checkpoint(m)) if m.contains("version")));
    }
}
