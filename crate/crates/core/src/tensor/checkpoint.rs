//! Flat little-endian parameter checkpoints.
//!
//! Layout: `b"VITF"`, `u32` version, `u32` tensor count, then per tensor a
//! `u32` name length, the UTF-8 name, a `u32` rank, `u64` dimensions and
//! the row-major `f64` values.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::Tensor;

pub const MAGIC: [u8; 4] = *b"VITF";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

fn io_err(path: &str) -> impl Fn(io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_string(),
        source,
    }
}

pub fn write_tensors<W: Write>(mut w: W, tensors: &[(String, Tensor)]) -> io::Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let corrupt = |e: io::Error| CheckpointError::Corrupt(e.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r).map_err(corrupt)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = read_u32(&mut r).map_err(corrupt)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(&mut r).map_err(corrupt)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(corrupt)?;
        let name = String::from_utf8(name).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let rank = read_u32(&mut r).map_err(corrupt)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<io::Result<Vec<_>>>()
            .map_err(corrupt)?;
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes).map_err(corrupt)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn save(path: &Path, tensors: &[(String, Tensor)]) -> Result<(), CheckpointError> {
    let p = path.display().to_string();
    let file = File::create(path).map_err(io_err(&p))?;
    write_tensors(BufWriter::new(file), tensors).map_err(io_err(&p))
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let p = path.display().to_string();
    let file = File::open(path).map_err(io_err(&p))?;
    read_tensors(BufReader::new(file))
}
