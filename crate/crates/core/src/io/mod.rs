//! On-disk formats: demonstration datasets and model checkpoints.

mod checkpoint;
mod dataset;

use std::io::Read;
use thiserror::Error;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use dataset::{
    read_dataset, read_episode, write_dataset, write_episode, DatasetIndex, EpisodeRecord,
    EPISODE_VERSION, INDEX_NAME,
};

pub const MAGIC_EPISODE: &[u8; 4] = b"ISPD";
pub const MAGIC_CHECKPOINT: &[u8; 4] = b"ISPC";

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("corrupt file: {0}")]
    Corrupt(String),
}

fn read_exact_or_corrupt<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), IoError> {
    r.read_exact(buf)
        .map_err(|_| IoError::Corrupt(format!("truncated while reading {what}")))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32, IoError> {
    let mut b = [0u8; 4];
    read_exact_or_corrupt(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64, IoError> {
    let mut b = [0u8; 8];
    read_exact_or_corrupt(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}
