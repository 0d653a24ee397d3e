//! Parameter checkpoints.
//!
//! Layout: the ASCII line `NSCK v1\n`, a little-endian `u32` record count,
//! then per record `u32` name length, UTF-8 name bytes, `u32` rank, rank ×
//! `u64` dimensions, and the data as little-endian `f64`.

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8] = b"NSCK v1\n";

pub fn encode_checkpoint<'t>(params: impl IntoIterator<Item = (String, &'t Tensor)>) -> Vec<u8> {
    let params: Vec<_> = params.into_iter().collect();
    let mut out = CHECKPOINT_MAGIC.to_vec();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'b [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(CHECKPOINT_MAGIC.len(), "header")? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "missing NSCK v1 header".into(),
        });
    }
    let count = r.u32("record count")?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|e| Error::Format {
                offset: at,
                message: format!("name is not UTF-8: {e}"),
            })?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let at = r.pos;
            let d = r.u64("dimension")? as usize;
            numel = numel.checked_mul(d).ok_or_else(|| Error::Format {
                offset: at,
                message: "dimension product overflows".into(),
            })?;
            shape.push(d);
        }
        let at = r.pos;
        let nbytes = numel.checked_mul(8).ok_or_else(|| Error::Format {
            offset: at,
            message: "payload size overflows".into(),
        })?;
        let data = r
            .take(nbytes, "tensor data")?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::Format {
            offset: at,
            message: e.to_string(),
        })?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos,
            message: "trailing bytes after last record".into(),
        });
    }
    Ok(out)
}

pub fn write_checkpoint<'t>(
    path: &Path,
    params: impl IntoIterator<Item = (String, &'t Tensor)>,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
