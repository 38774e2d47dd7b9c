//! Checkpoints: named f64 tensors behind a magic/version header, tagged
//! with the hash of the configuration that produced them.
//!
//! Tensors are written in name order, so the same map always produces the
//! same bytes. Model weights, normalizer constants, and optimizer slots
//! all travel as entries of one map.

use super::{read_exact_or_corrupt, read_u32, read_u64, IoError, MAGIC_CHECKPOINT};
use ndarray::{ArrayD, IxDyn};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(
    path: &Path,
    config_hash: &str,
    tensors: &BTreeMap<String, ArrayD<f64>>,
) -> Result<(), IoError> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC_CHECKPOINT)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(config_hash.len() as u32).to_le_bytes())?;
    out.write_all(config_hash.as_bytes())?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.ndim() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(String, BTreeMap<String, ArrayD<f64>>), IoError> {
    let mut inp = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_or_corrupt(&mut inp, &mut magic, "checkpoint header")?;
    if &magic != MAGIC_CHECKPOINT {
        return Err(IoError::BadMagic(magic));
    }
    let version = read_u32(&mut inp, "checkpoint version")?;
    if version != CHECKPOINT_VERSION {
        return Err(IoError::BadVersion(version));
    }
    let hash_len = read_u32(&mut inp, "hash length")? as usize;
    let mut hash_bytes = vec![0u8; hash_len];
    read_exact_or_corrupt(&mut inp, &mut hash_bytes, "config hash")?;
    let config_hash = String::from_utf8(hash_bytes)
        .map_err(|_| IoError::Corrupt("config hash is not utf-8".into()))?;

    let n_tensors = read_u32(&mut inp, "tensor count")? as usize;
    let mut tensors = BTreeMap::new();
    let mut buf8 = [0u8; 8];
    for _ in 0..n_tensors {
        let name_len = read_u32(&mut inp, "tensor name length")? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact_or_corrupt(&mut inp, &mut name_bytes, "tensor name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| IoError::Corrupt("tensor name is not utf-8".into()))?;
        let ndim = read_u32(&mut inp, "tensor rank")? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(read_u64(&mut inp, "tensor dim")? as usize);
        }
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            read_exact_or_corrupt(&mut inp, &mut buf8, "tensor data")?;
            data.push(f64::from_le_bytes(buf8));
        }
        let arr = ArrayD::from_shape_vec(IxDyn(&dims), data)
            .map_err(|_| IoError::Corrupt("tensor shape".into()))?;
        if tensors.insert(name, arr).is_some() {
            return Err(IoError::Corrupt("duplicate tensor name".into()));
        }
    }
    let mut trailing = [0u8; 1];
    if inp.read(&mut trailing)? != 0 {
        return Err(IoError::Corrupt("trailing bytes after checkpoint".into()));
    }
    Ok((config_hash, tensors))
}
