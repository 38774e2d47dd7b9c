//! Expert demonstration generation: seeded episodes, failures excluded,
//! index written last so partial directories are never readable.

use std::path::{Path, PathBuf};

use isp_core::env::expert_episode;
use isp_core::io::{write_dataset, EpisodeRecord};
use isp_core::util::substream;
use rand::Rng;

use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug)]
pub struct DemoSummary {
    pub written: usize,
    /// Episode seeds the expert failed on, excluded from the dataset.
    pub excluded: Vec<u64>,
    pub path: PathBuf,
}

pub fn gen_demos(cfg: &RunConfig) -> Result<DemoSummary, CliError> {
    let env_cfg = cfg.env_config();
    let mut records = Vec::with_capacity(cfg.demo_count);
    let mut excluded = Vec::new();
    let mut attempt = 0u64;
    while records.len() < cfg.demo_count {
        // Attempt indices keep their substream slots even when an episode
        // is excluded, so the k-th success is stable across retries.
        let ep_seed = substream(cfg.seed, "dataset", attempt).gen::<u64>();
        attempt += 1;
        let ep = expert_episode(&env_cfg, ep_seed)?;
        if ep.success {
            records.push(EpisodeRecord::from_episode(&ep));
        } else {
            excluded.push(ep_seed);
        }
        if attempt > cfg.demo_count as u64 * 2 + 64 {
            return Err(CliError::Config(format!(
                "expert failed {} of {} attempts; the task setup is broken",
                excluded.len(),
                attempt
            )));
        }
    }
    let dir = Path::new(&cfg.dataset_path);
    write_dataset(dir, &records, &cfg.canonical_hash())?;
    Ok(DemoSummary { written: records.len(), excluded, path: dir.to_path_buf() })
}
