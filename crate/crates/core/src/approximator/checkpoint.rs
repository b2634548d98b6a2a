//! `PDNS1` checkpoint files.
//!
//! Layout: the five magic bytes, a `u64` array count, then each array as a
//! `u64` rank, `rank` many `u64` dims and the little-endian `f32` data. Arrays
//! are written as all parameter arrays, then the Adam first moments, second
//! moments and EMA copies. A trailer holds the `u64` step count and the config
//! hash as a length-prefixed UTF-8 string. All integers are little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"PDNS1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub store: ParamStore,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.store;
        let groups = [&s.params, &s.adam_m, &s.adam_v, &s.ema];
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let count: usize = groups.iter().map(|g| g.len()).sum();
        out.extend_from_slice(&(count as u64).to_le_bytes());
        for t in groups.iter().flat_map(|g| g.iter()) {
            out.extend_from_slice(&(t.shape.len() as u64).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&s.step_count.to_le_bytes());
        out.extend_from_slice(&(self.config_hash.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config_hash.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 5];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let count = read_u64(&mut r)? as usize;
        if count % 4 != 0 {
            return Err(Error::Checkpoint(format!("array count {count} is not a multiple of 4")));
        }
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let rank = read_u64(&mut r)? as usize;
            if rank > 8 {
                return Err(Error::Checkpoint(format!("implausible rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut r)? as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n.saturating_mul(4) <= r.len())
                .ok_or_else(|| Error::Checkpoint("array larger than the file".into()))?;
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let mut b = [0u8; 4];
                read_exact(&mut r, &mut b)?;
                data.push(f32::from_le_bytes(b) as f64);
            }
            arrays.push(Tensor { shape, data });
        }
        let step_count = read_u64(&mut r)?;
        let hash_len = read_u64(&mut r)? as usize;
        if hash_len > r.len() {
            return Err(Error::Checkpoint("truncated config hash".into()));
        }
        let config_hash = String::from_utf8(r[..hash_len].to_vec())
            .map_err(|_| Error::Checkpoint("config hash is not UTF-8".into()))?;
        if hash_len != r.len() {
            return Err(Error::Checkpoint("trailing bytes after config hash".into()));
        }
        let p = count / 4;
        let ema = arrays.split_off(3 * p);
        let adam_v = arrays.split_off(2 * p);
        let adam_m = arrays.split_off(p);
        let params = arrays;
        for group in [&adam_m, &adam_v, &ema] {
            if group.iter().zip(&params).any(|(a, b)| a.shape != b.shape) {
                return Err(Error::Checkpoint("moment/EMA shapes differ from parameters".into()));
            }
        }
        Ok(Self {
            store: ParamStore {
                params,
                adam_m,
                adam_v,
                ema,
                step_count,
            },
            config_hash,
        })
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint("unexpected end of file".into()))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&ckpt.to_bytes())?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
