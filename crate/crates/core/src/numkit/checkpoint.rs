use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::scalar::Real;

use super::{ParamSet, Tensor};

const MAGIC: &[u8; 4] = b"MFK1";
const MAX_NAME: u32 = 4096;
const MAX_RANK: u32 = 8;
const MAX_VALUES: u64 = 1 << 28;

/// Errors reading or writing model checkpoints.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Writes a parameter set as a flat binary checkpoint.
///
/// Layout: magic `MFK1`, then per parameter: name length (u32 LE), name
/// bytes, rank (u32 LE), each dimension (u32 LE), values as f64 LE.
pub fn save_checkpoint<T: Real>(params: &ParamSet<T>, path: &Path) -> Result<(), CheckpointError> {
    let mut buf = Vec::with_capacity(16 + params.value_count() * 8);
    buf.extend_from_slice(MAGIC);
    for (name, tensor) in params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in tensor.data() {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`], preserving parameter
/// order.
pub fn load_checkpoint<T: Real>(path: &Path) -> Result<ParamSet<T>, CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };

    if r.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut params = ParamSet::new();
    while !r.done() {
        let name_len = r.u32()?;
        if name_len > MAX_NAME {
            return Err(CheckpointError::Corrupt(format!("name length {name_len}")));
        }
        let name = std::str::from_utf8(r.take(name_len as usize)?)
            .map_err(|_| CheckpointError::Corrupt("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        if rank == 0 || rank > MAX_RANK {
            return Err(CheckpointError::Corrupt(format!("rank {rank} for {name:?}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut count: u64 = 1;
        for _ in 0..rank {
            let d = r.u32()?;
            if d == 0 {
                return Err(CheckpointError::Corrupt(format!("zero dimension in {name:?}")));
            }
            count = count.saturating_mul(d as u64);
            shape.push(d as usize);
        }
        if count > MAX_VALUES {
            return Err(CheckpointError::Corrupt(format!("{name:?} claims {count} values")));
        }
        let mut values = Vec::with_capacity(count as usize);
        for _ in 0..count {
            values.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
        }
        if params.get(&name).is_some() {
            return Err(CheckpointError::Corrupt(format!("duplicate parameter {name:?}")));
        }
        let tensor = Tensor::from_f64(shape, &values)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        params.insert(&name, tensor);
    }
    Ok(params)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Corrupt("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
