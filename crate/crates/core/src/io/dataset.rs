//! Demonstration dataset on disk: one binary blob per episode plus a JSON
//! index.
//!
//! Blobs hold images as f32 and proprioception and actions as f64, all
//! little-endian, behind a magic/version header. The index lists every
//! blob with its seed and the hash of the generating configuration; it is
//! written only after all blobs, so a dataset with an index is complete.

use super::{read_exact_or_corrupt, read_u32, read_u64, IoError, MAGIC_EPISODE};
use crate::env::Episode;
use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const EPISODE_VERSION: u32 = 1;
pub const INDEX_NAME: &str = "index.json";

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub success: bool,
    /// [n, 3, h, w]
    pub images: Array4<f32>,
    /// [n, 10]
    pub proprio: Array2<f64>,
    /// [n, 10]
    pub actions: Array2<f64>,
}

impl EpisodeRecord {
    pub fn from_episode(ep: &Episode) -> Self {
        let n = ep.len();
        let (h, w) = match ep.images.first() {
            Some(img) => {
                let d = img.dim();
                (d.1, d.2)
            }
            None => (0, 0),
        };
        let mut images = Array4::zeros((n, 3, h, w));
        for (i, img) in ep.images.iter().enumerate() {
            for ((c, y, x), &v) in img.indexed_iter() {
                images[[i, c, y, x]] = v as f32;
            }
        }
        let mut proprio = Array2::zeros((n, 10));
        let mut actions = Array2::zeros((n, 10));
        for i in 0..n {
            for d in 0..10 {
                proprio[[i, d]] = ep.proprio[i][d];
                actions[[i, d]] = ep.actions[i][d];
            }
        }
        Self { seed: ep.seed, success: ep.success, images, proprio, actions }
    }

    pub fn len(&self) -> usize {
        self.actions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub episodes: Vec<String>,
    pub seeds: Vec<u64>,
    pub config_hash: String,
}

pub fn write_episode(path: &Path, rec: &EpisodeRecord) -> Result<(), IoError> {
    let (n, c, h, w) = rec.images.dim();
    assert_eq!(c, 3);
    assert_eq!(n, rec.proprio.nrows());
    assert_eq!(n, rec.actions.nrows());
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC_EPISODE)?;
    out.write_all(&EPISODE_VERSION.to_le_bytes())?;
    out.write_all(&rec.seed.to_le_bytes())?;
    out.write_all(&[rec.success as u8])?;
    for dim in [n, h, w] {
        out.write_all(&(dim as u32).to_le_bytes())?;
    }
    for &v in rec.images.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    for &v in rec.proprio.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    for &v in rec.actions.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_episode(path: &Path) -> Result<EpisodeRecord, IoError> {
    let mut inp = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_or_corrupt(&mut inp, &mut magic, "episode header")?;
    if &magic != MAGIC_EPISODE {
        return Err(IoError::BadMagic(magic));
    }
    let version = read_u32(&mut inp, "episode version")?;
    if version != EPISODE_VERSION {
        return Err(IoError::BadVersion(version));
    }
    let seed = read_u64(&mut inp, "episode seed")?;
    let mut flag = [0u8; 1];
    read_exact_or_corrupt(&mut inp, &mut flag, "success flag")?;
    if flag[0] > 1 {
        return Err(IoError::Corrupt("success flag out of range".into()));
    }
    let n = read_u32(&mut inp, "step count")? as usize;
    let h = read_u32(&mut inp, "image height")? as usize;
    let w = read_u32(&mut inp, "image width")? as usize;

    let n_px = n * 3 * h * w;
    let mut images = Vec::with_capacity(n_px);
    let mut buf4 = [0u8; 4];
    for _ in 0..n_px {
        read_exact_or_corrupt(&mut inp, &mut buf4, "image data")?;
        images.push(f32::from_le_bytes(buf4));
    }
    let mut buf8 = [0u8; 8];
    let mut read_rows = |label: &'static str| -> Result<Vec<f64>, IoError> {
        let mut v = Vec::with_capacity(n * 10);
        for _ in 0..n * 10 {
            read_exact_or_corrupt(&mut inp, &mut buf8, label)?;
            v.push(f64::from_le_bytes(buf8));
        }
        Ok(v)
    };
    let proprio = read_rows("proprioception data")?;
    let actions = read_rows("action data")?;
    let mut trailing = [0u8; 1];
    if inp.read(&mut trailing)? != 0 {
        return Err(IoError::Corrupt("trailing bytes after episode".into()));
    }

    Ok(EpisodeRecord {
        seed,
        success: flag[0] == 1,
        images: Array4::from_shape_vec((n, 3, h, w), images)
            .map_err(|_| IoError::Corrupt("image shape".into()))?,
        proprio: Array2::from_shape_vec((n, 10), proprio)
            .map_err(|_| IoError::Corrupt("proprioception shape".into()))?,
        actions: Array2::from_shape_vec((n, 10), actions)
            .map_err(|_| IoError::Corrupt("action shape".into()))?,
    })
}

/// Writes all episode blobs, then the index. A crash mid-write leaves a
/// directory without an index, which readers reject.
pub fn write_dataset(dir: &Path, records: &[EpisodeRecord], config_hash: &str) -> Result<(), IoError> {
    std::fs::create_dir_all(dir)?;
    let mut index = DatasetIndex {
        episodes: Vec::with_capacity(records.len()),
        seeds: Vec::with_capacity(records.len()),
        config_hash: config_hash.to_string(),
    };
    for (i, rec) in records.iter().enumerate() {
        let name = format!("ep_{i:05}.ispd");
        write_episode(&dir.join(&name), rec)?;
        index.episodes.push(name);
        index.seeds.push(rec.seed);
    }
    let json = serde_json::to_string_pretty(&index)?;
    std::fs::write(dir.join(INDEX_NAME), json + "\n")?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<(DatasetIndex, Vec<EpisodeRecord>), IoError> {
    let index_path = dir.join(INDEX_NAME);
    if !index_path.exists() {
        return Err(IoError::Corrupt(format!(
            "no {INDEX_NAME} in {}: dataset missing or incomplete",
            dir.display()
        )));
    }
    let index: DatasetIndex = serde_json::from_str(&std::fs::read_to_string(index_path)?)?;
    if index.episodes.len() != index.seeds.len() {
        return Err(IoError::Corrupt("index episode/seed count mismatch".into()));
    }
    let mut records = Vec::with_capacity(index.episodes.len());
    for (name, &seed) in index.episodes.iter().zip(&index.seeds) {
        let rec = read_episode(&dir.join(name))?;
        if rec.seed != seed {
            return Err(IoError::Corrupt(format!("{name} seed disagrees with index")));
        }
        records.push(rec);
    }
    Ok((index, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{expert_episode, EnvConfig};

    fn sample_records() -> Vec<EpisodeRecord> {
        let cfg = EnvConfig { image_hw: 8, tilt: false, max_steps: 100 };
        (0..3)
            .map(|seed| EpisodeRecord::from_episode(&expert_episode(&cfg, seed).unwrap()))
            .collect()
    }

    #[test]
    fn episode_blobs_round_trip_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let recs = sample_records();
        let path = dir.path().join("ep.ispd");
        write_episode(&path, &recs[0]).unwrap();
        let back = read_episode(&path).unwrap();
        assert_eq!(back.seed, recs[0].seed);
        assert_eq!(back.success, recs[0].success);
        for (a, b) in back.images.iter().zip(recs[0].images.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in back.actions.iter().zip(recs[0].actions.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in back.proprio.iter().zip(recs[0].proprio.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn writing_the_same_records_twice_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let recs = sample_records();
        write_dataset(&dir.path().join("a"), &recs, "deadbeef").unwrap();
        write_dataset(&dir.path().join("b"), &recs, "deadbeef").unwrap();
        for name in ["ep_00000.ispd", "ep_00001.ispd", "ep_00002.ispd", INDEX_NAME] {
            let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
            let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between reruns");
        }
    }

    #[test]
    fn datasets_round_trip_through_the_index() {
        let dir = tempfile::tempdir().unwrap();
        let recs = sample_records();
        write_dataset(dir.path(), &recs, "cafe01").unwrap();
        let (index, back) = read_dataset(dir.path()).unwrap();
        assert_eq!(index.config_hash, "cafe01");
        assert_eq!(index.seeds, vec![0, 1, 2]);
        assert_eq!(back, recs);
    }

    #[test]
    fn an_empty_dataset_is_valid_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &[], "00").unwrap();
        let (index, back) = read_dataset(dir.path()).unwrap();
        assert!(index.episodes.is_empty());
        assert!(back.is_empty());
    }

    #[test]
    fn corruption_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let recs = sample_records();
        let path = dir.path().join("ep.ispd");
        write_episode(&path, &recs[0]).unwrap();

        let good = std::fs::read(&path).unwrap();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(read_episode(&path), Err(IoError::BadMagic(_))));

        let mut truncated = good.clone();
        truncated.truncate(good.len() - 7);
        std::fs::write(&path, &truncated).unwrap();
        assert!(matches!(read_episode(&path), Err(IoError::Corrupt(_))));

        let mut padded = good.clone();
        padded.push(0);
        std::fs::write(&path, &padded).unwrap();
        assert!(matches!(read_episode(&path), Err(IoError::Corrupt(_))));

        let mut wrong_version = good;
        wrong_version[4] = 99;
        std::fs::write(&path, &wrong_version).unwrap();
        assert!(matches!(read_episode(&path), Err(IoError::BadVersion(99))));
    }

    #[test]
    fn a_directory_without_an_index_is_not_a_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let recs = sample_records();
        write_episode(&dir.path().join("ep_00000.ispd"), &recs[0]).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(IoError::Corrupt(_))));
    }
}
