//! Binary checkpoint files for named parameters.
//!
//! Layout: magic `CTCN`, format version (u32 LE), then one record per
//! parameter: name length (u32 LE), name bytes, rank (u32 LE), extents
//! (u32 LE each), data (f64 LE each). Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CtcnError, Result};
use crate::tensor::{Parameter, Tensor};

const MAGIC: &[u8; 4] = b"CTCN";
const VERSION: u32 = 1;

pub fn save(path: &Path, params: &[Parameter]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for p in params {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let shape = p.tensor.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &e in &shape {
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        p.tensor.with_data(|d| -> Result<()> {
            for &v in d {
                w.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<Parameter>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CtcnError::Checkpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CtcnError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let mut params = Vec::new();
    loop {
        let name_len = match read_u32_eof(&mut r)? {
            Some(v) => v as usize,
            None => break,
        };
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| CtcnError::Checkpoint(format!("non-utf8 name: {e}")))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        params.push(Parameter {
            name,
            tensor: Tensor::leaf_with_grad(shape, data)?,
        });
    }
    Ok(params)
}

/// Copy checkpoint values into an existing parameter set, matching by name.
pub fn restore_into(params: &[Parameter], loaded: &[Parameter]) -> Result<()> {
    for p in params {
        let src = loaded
            .iter()
            .find(|l| l.name == p.name)
            .ok_or_else(|| CtcnError::Checkpoint(format!("missing parameter '{}'", p.name)))?;
        if src.tensor.shape() != p.tensor.shape() {
            return Err(CtcnError::Checkpoint(format!(
                "parameter '{}' has shape {:?} in checkpoint, expected {:?}",
                p.name,
                src.tensor.shape(),
                p.tensor.shape()
            )));
        }
        p.tensor.set_data(src.tensor.data())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u32_eof(r: &mut impl Read) -> Result<Option<u32>> {
    let mut buf = [0u8; 4];
    match r.read_exact(&mut buf) {
        Ok(()) => Ok(Some(u32::from_le_bytes(buf))),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Ok(None),
        Err(e) => Err(e.into()),
    }
}
