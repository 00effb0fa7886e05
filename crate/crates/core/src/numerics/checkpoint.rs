//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "SARLCKPT"
//! version  u32      CHECKPOINT_VERSION
//! count    u32      number of tensors
//! repeated count times:
//!   group  u32 len + utf-8 bytes
//!   name   u32 len + utf-8 bytes
//!   ndims  u32, then ndims x u64 dims
//!   values prod(dims) x f64 (IEEE-754 bits)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, SarlError};
use crate::numerics::{GroupName, ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SARLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub group: GroupName,
    pub name: String,
    pub value: Tensor,
}

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let ids = store.all_ids();
    out.extend_from_slice(&(ids.len() as u32).to_le_bytes());
    for id in ids {
        let p = store.get(id);
        write_str(&mut out, id.group.as_str());
        write_str(&mut out, &p.name);
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    out
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(SarlError::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| SarlError::Checkpoint(e.to_string()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<CheckpointEntry>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != CHECKPOINT_MAGIC {
        return Err(SarlError::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(SarlError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = cur.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let group_name = cur.string()?;
        let group = GroupName::parse(&group_name)
            .ok_or_else(|| SarlError::Checkpoint(format!("unknown group `{group_name}`")))?;
        let name = cur.string()?;
        let ndims = cur.u32()? as usize;
        let shape = (0..ndims).map(|_| cur.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let data = (0..len)
            .map(|_| cur.u64().map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        entries.push(CheckpointEntry {
            group,
            name,
            value: Tensor::new(shape, data)?,
        });
    }
    if cur.pos != bytes.len() {
        return Err(SarlError::Checkpoint("trailing bytes".into()));
    }
    Ok(entries)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| SarlError::io(path, e))?;
    f.write_all(&encode(store)).map_err(|e| SarlError::io(path, e))
}

/// Overwrites the values of `store` with the tensors stored at `path`.
///
/// Every tensor of `store` must be present with matching group and shape.
pub fn load_into(store: &mut ParamStore, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| SarlError::io(path, e))?;
    apply(store, decode(&bytes)?)
}

pub fn apply(store: &mut ParamStore, entries: Vec<CheckpointEntry>) -> Result<()> {
    if entries.len() != store.all_ids().len() {
        return Err(SarlError::Checkpoint(format!(
            "checkpoint has {} tensors, model has {}",
            entries.len(),
            store.all_ids().len()
        )));
    }
    for e in entries {
        let id = store
            .find(&e.name)
            .ok_or_else(|| SarlError::Checkpoint(format!("unknown tensor `{}`", e.name)))?;
        if id.group != e.group {
            return Err(SarlError::Checkpoint(format!("tensor `{}` stored under group {}", e.name, e.group)));
        }
        let slot = store.value_mut(id);
        if slot.shape() != e.value.shape() {
            return Err(SarlError::shape("checkpoint", slot.shape(), e.value.shape()));
        }
        *slot = e.value;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> ParamStore {
        let mut s = ParamStore::default();
        s.add(GroupName::Ptm, "emb", Tensor::matrix(2, 2, vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap());
        s.add(GroupName::Sc, "bias", Tensor::vector(vec![std::f64::consts::PI]).unwrap());
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let store = sample_store();
        let entries = decode(&encode(&store)).unwrap();
        let mut other = sample_store();
        for id in other.all_ids() {
            other.value_mut(id).data_mut().fill(0.0);
        }
        apply(&mut other, entries).unwrap();
        for id in store.all_ids() {
            let a: Vec<u64> = store.value(id).data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = other.value(id).data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rejects_wrong_version() {
        let mut bytes = encode(&sample_store());
        bytes[8] = 9;
        assert!(matches!(decode(&bytes), Err(SarlError::Checkpoint(_))));
    }

    #[test]
    fn rejects_truncation() {
        let bytes = encode(&sample_store());
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
    }
}
