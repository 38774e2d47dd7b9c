//! Seeded rollout evaluation: receding-horizon control from a trained
//! checkpoint, an oracle mode that wraps the scripted expert, and a paired
//! rotated pass that replays each start under a random scene rotation.

use std::collections::VecDeque;
use std::path::Path;

use isp_core::diffusion::{
    sample_chunk, standard_normal_vec, steps_from_flat, ActionChunk, Normalizer, NoiseSchedule,
    ObsInputs, PolicyAssets, PolicySpec, STEP_DIM,
};
use isp_core::env::{expert_action, render, rotate_scene, sample_scene, step, EnvError, SceneState};
use isp_core::io::read_checkpoint;
use isp_core::nn::ParamStore;
use isp_core::so3::{FiniteGroup, Rotation};
use isp_core::util::substream;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::trainer::split_tensors;
use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutRow {
    pub index: usize,
    pub success: bool,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSection {
    /// Percent of rollouts that lifted the target.
    pub success_rate: f64,
    pub mean_length: f64,
    pub rollouts: Vec<RolloutRow>,
}

impl EvalSection {
    fn from_rows(rollouts: Vec<RolloutRow>) -> Self {
        let n = rollouts.len();
        if n == 0 {
            return Self { success_rate: 0.0, mean_length: 0.0, rollouts };
        }
        let wins = rollouts.iter().filter(|r| r.success).count();
        let steps: usize = rollouts.iter().map(|r| r.steps).sum();
        Self {
            success_rate: 100.0 * wins as f64 / n as f64,
            mean_length: steps as f64 / n as f64,
            rollouts,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub n_rollouts: usize,
    pub oracle: bool,
    pub standard: EvalSection,
    /// Same starts, each transformed by a random scene rotation.
    pub rotated: EvalSection,
}

enum Controller {
    Oracle,
    Model {
        spec: PolicySpec,
        assets: PolicyAssets,
        schedule: NoiseSchedule,
        store: ParamStore,
        normalizer: Normalizer,
    },
}

fn load_controller(cfg: &RunConfig, checkpoint: Option<&Path>, oracle: bool) -> Result<Controller, CliError> {
    if oracle {
        return Ok(Controller::Oracle);
    }
    let path = checkpoint
        .ok_or_else(|| CliError::Config("eval needs --checkpoint unless --oracle is set".into()))?;
    let (ck_hash, tensors) = read_checkpoint(path)?;
    let expected = cfg.canonical_hash();
    if ck_hash != expected {
        return Err(CliError::HashMismatch { expected, found: ck_hash });
    }
    let loaded = split_tensors(tensors)?;
    let spec = cfg.policy_spec();
    let assets = spec.build_assets()?;
    Ok(Controller::Model {
        spec,
        assets,
        schedule: cfg.schedule()?,
        store: loaded.store,
        normalizer: loaded
            .normalizer
            .ok_or_else(|| CliError::Config("checkpoint lacks normalizer tensors".into()))?,
    })
}

/// Runs one episode; the rng continues the stream that sampled the scene,
/// so model noise draws are paired between standard and rotated passes.
fn rollout<R: Rng>(
    cfg: &RunConfig,
    ctrl: &Controller,
    initial: SceneState,
    rng: &mut R,
) -> Result<(bool, usize), CliError> {
    let mut state = initial;
    let mut steps = 0usize;
    let mut history: VecDeque<[f64; 10]> = VecDeque::with_capacity(cfg.history);
    for _ in 0..cfg.history {
        history.push_back(state.proprio());
    }

    while steps < cfg.max_env_steps && !state.is_success() {
        match ctrl {
            Controller::Oracle => {
                let action = expert_action(&state);
                state = step(&state, &action)?;
                steps += 1;
                history.pop_front();
                history.push_back(state.proprio());
            }
            Controller::Model { spec, assets, schedule, store, normalizer } => {
                let image = render(&state, cfg.image_hw);
                let rows: Vec<[f64; 10]> = history
                    .iter()
                    .map(|r| {
                        let m = ndarray::Array2::from_shape_vec((1, STEP_DIM), r.to_vec()).unwrap();
                        let n = normalizer.normalize(&ActionChunk::new(m)).steps;
                        let mut out = [0.0; STEP_DIM];
                        for d in 0..STEP_DIM {
                            out[d] = n[[0, d]];
                        }
                        out
                    })
                    .collect();
                let obs = ObsInputs::from_raw(&[image], &[rows], &[state.gripper_rot]);
                let init = steps_from_flat(&standard_normal_vec(rng, cfg.horizon * STEP_DIM));
                let chunk = sample_chunk(spec, store, assets, &obs, schedule, cfg.ddim_steps, init);
                let actions = normalizer.denormalize(&ActionChunk::new(chunk));
                for k in 0..cfg.execute {
                    if steps >= cfg.max_env_steps || state.is_success() {
                        break;
                    }
                    let mut action = [0.0; STEP_DIM];
                    for d in 0..STEP_DIM {
                        action[d] = actions.steps[[k, d]];
                    }
                    match step(&state, &action) {
                        Ok(next) => state = next,
                        // A degenerate predicted rotation cannot be
                        // executed; the episode counts as a failure.
                        Err(EnvError::Action(_)) => return Ok((false, steps)),
                        Err(e) => return Err(e.into()),
                    }
                    steps += 1;
                    history.pop_front();
                    history.push_back(state.proprio());
                }
            }
        }
    }
    Ok((state.is_success(), steps))
}

pub fn evaluate(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    n_rollouts: usize,
    oracle: bool,
) -> Result<EvalReport, CliError> {
    let ctrl = load_controller(cfg, checkpoint, oracle)?;
    let env_cfg = cfg.env_config();
    let group = FiniteGroup::icosahedral().map_err(isp_core::diffusion::PolicyError::from)?;

    let mut standard = Vec::with_capacity(n_rollouts);
    let mut rotated = Vec::with_capacity(n_rollouts);
    for i in 0..n_rollouts {
        let mut rng = substream(cfg.seed, "eval", i as u64);
        let state = sample_scene(&env_cfg, &mut rng);
        let (success, steps) = rollout(cfg, &ctrl, state, &mut rng)?;
        standard.push(RolloutRow { index: i, success, steps });

        let mut rng = substream(cfg.seed, "eval", i as u64);
        let base = sample_scene(&env_cfg, &mut rng);
        let g = pick_rotation(&group, cfg.seed, i as u64);
        let turned = rotate_scene(&base, &g)?;
        let (success, steps) = rollout(cfg, &ctrl, turned, &mut rng)?;
        rotated.push(RolloutRow { index: i, success, steps });
    }

    Ok(EvalReport {
        config_hash: cfg.canonical_hash(),
        n_rollouts,
        oracle,
        standard: EvalSection::from_rows(standard),
        rotated: EvalSection::from_rows(rotated),
    })
}

/// Uniform draw over the icosahedral elements, from its own substream so
/// the paired standard rollout sees identical noise.
fn pick_rotation(group: &FiniteGroup, seed: u64, index: u64) -> Rotation {
    let mut rng = substream(seed, "eval-rot", index);
    group.elements[rng.gen_range(0..group.elements.len())]
}
