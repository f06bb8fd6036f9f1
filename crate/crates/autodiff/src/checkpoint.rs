//! Binary container of named tensors.
//!
//! Layout (little-endian): the magic line `CTXPARSE-CKPT-1\n`, a `u32`
//! tensor count, then per tensor a `u32` name length, UTF-8 name bytes,
//! a `u32` rank, `u64` dimensions, and row-major `f64` values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::{AutodiffError, Tensor};

pub const CHECKPOINT_MAGIC: &str = "CTXPARSE-CKPT-1";

pub fn encode_checkpoint(tensors: &[(String, Tensor)]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
    buf.push(b'\n');
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for v in t.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AutodiffError> {
        if self.pos + n > self.bytes.len() {
            return Err(AutodiffError::CorruptCheckpoint(format!(
                "truncated at byte {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, AutodiffError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, AutodiffError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, AutodiffError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, AutodiffError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(CHECKPOINT_MAGIC.len() + 1)?;
    if &magic[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC.as_bytes() || magic[magic.len() - 1] != b'\n' {
        return Err(AutodiffError::CorruptCheckpoint("bad magic header".into()));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|e| AutodiffError::CorruptCheckpoint(e.to_string()))?;
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let (rows, cols) = match dims.as_slice() {
            [n] => (1, *n),
            [a, b] => (*a, *b),
            _ => {
                return Err(AutodiffError::CorruptCheckpoint(format!(
                    "tensor {name} has unsupported rank {rank}"
                )))
            }
        };
        let values = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        out.push((name, Tensor::from_vec(rows, cols, values)?));
    }
    if r.pos != bytes.len() {
        return Err(AutodiffError::CorruptCheckpoint("trailing bytes".into()));
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, tensors: &[(String, Tensor)]) -> Result<(), AutodiffError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_checkpoint(tensors))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>, AutodiffError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
