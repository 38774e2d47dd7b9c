//! Seeded diffusion training over recorded demonstrations. Every random
//! draw comes from a substream keyed by the absolute step index, so a
//! resumed run continues the exact trajectory of an uninterrupted one.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use isp_core::diffusion::{
    rotate_steps_linear, standard_normal_vec, steps_from_flat, ActInputs, ActionChunk, Normalizer,
    NoiseSchedule, ObsInputs, PolicyAssets, PolicySpec, Variant, STEP_DIM,
};
use isp_core::io::{read_checkpoint, read_dataset, write_checkpoint, EpisodeRecord};
use isp_core::nn::{timestep_embedding, AdamW, Graph, ParamStore, TIME_EMB_DIM};
use isp_core::so3::Rotation;
use isp_core::util::substream;
use ndarray::{Array1, Array2, Array3, ArrayD, Axis};
use rand::Rng;

use crate::config::{AugmentMode, RunConfig};
use crate::CliError;

#[derive(Debug)]
pub struct TrainOutcome {
    pub steps: u64,
    pub first_loss: f64,
    pub final_loss: f64,
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
}

/// Checkpoint tensors split back into their roles.
pub struct LoadedModel {
    pub store: ParamStore,
    pub normalizer: Option<Normalizer>,
    pub step: u64,
    pub slots: BTreeMap<String, ArrayD<f64>>,
}

pub fn split_tensors(tensors: BTreeMap<String, ArrayD<f64>>) -> Result<LoadedModel, CliError> {
    let mut store = ParamStore::new();
    let mut slots = BTreeMap::new();
    let mut norm = BTreeMap::new();
    let mut step = 0u64;
    for (name, v) in tensors {
        if name == "opt.step" {
            let raw = v
                .iter()
                .next()
                .copied()
                .ok_or_else(|| CliError::Config("empty step counter in checkpoint".into()))?;
            step = raw as u64;
        } else if name.starts_with("adam_m.") || name.starts_with("adam_v.") {
            slots.insert(name, v);
        } else if name.starts_with("norm.") {
            norm.insert(name, v.iter().copied().collect::<Vec<f64>>());
        } else {
            store.insert(&name, v);
        }
    }
    let normalizer = Normalizer::from_tensors(&norm);
    Ok(LoadedModel { store, normalizer, step, slots })
}

fn export_tensors(
    store: &ParamStore,
    opt: &AdamW,
    normalizer: &Normalizer,
) -> BTreeMap<String, ArrayD<f64>> {
    let mut out = BTreeMap::new();
    for (name, v) in store.iter() {
        out.insert(name.clone(), v.clone());
    }
    for (name, vec) in normalizer.to_tensors() {
        out.insert(name, Array1::from(vec).into_dyn());
    }
    let (t, slots) = opt.export_state();
    out.insert("opt.step".into(), Array1::from(vec![t as f64]).into_dyn());
    out.extend(slots);
    out
}

/// One demonstration decoded for sampling: raw rows plus the camera
/// orientation per frame.
struct EpisodeData {
    images: ndarray::Array4<f64>,
    proprio: Array2<f64>,
    actions: Array2<f64>,
    r_x: Vec<Rotation>,
}

pub struct TrainData {
    episodes: Vec<EpisodeData>,
    samples: Vec<(usize, usize)>,
}

impl TrainData {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn prepare(cfg: &RunConfig, records: &[EpisodeRecord]) -> Result<TrainData, CliError> {
    let mut episodes = Vec::with_capacity(records.len());
    let mut samples = Vec::new();
    for (e, rec) in records.iter().enumerate() {
        let d = rec.images.dim();
        if d.1 != 3 || d.2 != cfg.image_hw || d.3 != cfg.image_hw {
            return Err(CliError::Config(format!(
                "dataset images are {}x{}, config expects {}x{}",
                d.2, d.3, cfg.image_hw, cfg.image_hw
            )));
        }
        let mut r_x = Vec::with_capacity(rec.len());
        for t in 0..rec.len() {
            let p = rec.proprio.row(t);
            let six = [p[3], p[4], p[5], p[6], p[7], p[8]];
            let r = isp_core::diffusion::rot6d_decode(&six)
                .map_err(|e| CliError::Config(format!("bad pose in demo frame {t}: {e}")))?;
            r_x.push(r);
            samples.push((e, t));
        }
        episodes.push(EpisodeData {
            images: rec.images.mapv(f64::from),
            proprio: rec.proprio.clone(),
            actions: rec.actions.clone(),
            r_x,
        });
    }
    Ok(TrainData { episodes, samples })
}

fn fit_normalizer(cfg: &RunConfig, records: &[EpisodeRecord]) -> Normalizer {
    let chunks: Vec<ActionChunk> =
        records.iter().map(|r| ActionChunk::new(r.actions.clone())).collect();
    match cfg.variant_enum() {
        Variant::BaselinePlain => Normalizer::fit_per_dim(&chunks),
        _ => Normalizer::fit_isotropic(&chunks),
    }
}

/// Rows `t-h+1 ..= t`, clamped at the episode start.
fn history_rows(ep: &EpisodeData, t: usize, history: usize) -> Array2<f64> {
    let mut out = Array2::zeros((history, STEP_DIM));
    for j in 0..history {
        let idx = (t + 1 + j).saturating_sub(history).min(t);
        out.row_mut(j).assign(&ep.proprio.row(idx));
    }
    out
}

/// Rows `t .. t+horizon`, the final row repeated past the episode end.
fn chunk_rows(ep: &EpisodeData, t: usize, horizon: usize) -> Array2<f64> {
    let n = ep.actions.nrows();
    let mut out = Array2::zeros((horizon, STEP_DIM));
    for j in 0..horizon {
        out.row_mut(j).assign(&ep.actions.row((t + j).min(n - 1)));
    }
    out
}

fn draw_augment<R: Rng>(
    mode: AugmentMode,
    assets: &PolicyAssets,
    rng: &mut R,
) -> Result<Rotation, CliError> {
    match mode {
        AugmentMode::None => Ok(Rotation::IDENTITY),
        AugmentMode::Continuous => Ok(Rotation::rz(rng.gen::<f64>() * std::f64::consts::TAU)),
        AugmentMode::Subgroup => {
            let lattice = assets.lattice.as_ref().ok_or_else(|| {
                CliError::Config("subgroup augmentation needs a lattice variant".into())
            })?;
            let group = &lattice.sampling.group;
            let subgroup = group.z_subgroup();
            let pick = subgroup[rng.gen_range(0..subgroup.len())];
            Ok(group.elements[pick])
        }
    }
}

fn rows_to_vecs(m: &Array2<f64>) -> Vec<[f64; 10]> {
    (0..m.nrows())
        .map(|i| {
            let mut row = [0.0; STEP_DIM];
            for d in 0..STEP_DIM {
                row[d] = m[[i, d]];
            }
            row
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    cfg: &RunConfig,
    spec: &PolicySpec,
    assets: &PolicyAssets,
    schedule: &NoiseSchedule,
    data: &TrainData,
    normalizer: &Normalizer,
    store: &mut ParamStore,
    opt: &mut AdamW,
    step: u64,
) -> Result<(f64, f64), CliError> {
    let mut rng = substream(cfg.seed, "noise", step);
    let mut rng_aug = substream(cfg.seed, "augment", step);
    let b = cfg.batch_size;
    let h = cfg.horizon;

    let mut images = Vec::with_capacity(b);
    let mut hist_rows_items = Vec::with_capacity(b);
    let mut r_x = Vec::with_capacity(b);
    let mut noisy_items = Vec::with_capacity(b);
    let mut eps_target = Array3::zeros((b, h, STEP_DIM));
    let mut t_emb = Array2::zeros((b, TIME_EMB_DIM));

    for i in 0..b {
        let (e, t) = data.samples[rng.gen_range(0..data.samples.len())];
        let ep = &data.episodes[e];
        let tk = rng.gen_range(1..=schedule.k_steps());
        let eps = steps_from_flat(&standard_normal_vec(&mut rng, h * STEP_DIM));
        let gz = draw_augment(cfg.augment, assets, &mut rng_aug)?;

        // The augmentation rotates raw world poses; the image stays as
        // recorded because an eye-in-hand camera turns with the scene.
        let hist = rotate_steps_linear(&history_rows(ep, t, cfg.history), &gz);
        let hist = normalizer.normalize(&ActionChunk::new(hist)).steps;
        let a0 = rotate_steps_linear(&chunk_rows(ep, t, h), &gz);
        let a0 = normalizer.normalize(&ActionChunk::new(a0)).steps;
        let eps_rot = rotate_steps_linear(&eps, &gz);
        let noisy = steps_from_flat(&schedule.forward_noise(
            &Array1::from_iter(a0.iter().copied()),
            &Array1::from_iter(eps_rot.iter().copied()),
            tk,
        ));

        images.push(ep.images.index_axis(Axis(0), t).to_owned());
        hist_rows_items.push(rows_to_vecs(&hist));
        r_x.push(gz.compose(&ep.r_x[t]));
        noisy_items.push(noisy);
        eps_target.index_axis_mut(Axis(0), i).assign(&eps_rot);
        t_emb.row_mut(i).assign(&timestep_embedding(tk));
    }

    let obs = ObsInputs::from_raw(&images, &hist_rows_items, &r_x);
    let act = ActInputs::from_steps(&noisy_items);

    let mut g = Graph::new();
    let (loss, _) = spec.training_loss_graph(&mut g, store, assets, &obs, &act, &t_emb, &eps_target);
    let loss_value = g.value(loss).sum();
    let raw = g.backward(loss);
    let grads = g.grads_by_name(&raw);
    let grad_norm = grads
        .values()
        .map(|a| a.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    opt.step(store, &grads);
    Ok((loss_value, grad_norm))
}

pub fn train(cfg: &RunConfig, out_dir: &Path, resume: Option<&Path>) -> Result<TrainOutcome, CliError> {
    let (_, records) = read_dataset(Path::new(&cfg.dataset_path))?;
    let total: usize = records.iter().map(|r| r.len()).sum();
    if total == 0 {
        return Err(CliError::EmptyDataset);
    }

    let spec = cfg.policy_spec();
    let assets = spec.build_assets()?;
    let schedule = cfg.schedule()?;
    let hash = cfg.canonical_hash();
    let data = prepare(cfg, &records)?;

    let mut store = ParamStore::new();
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut start = 0u64;
    let normalizer = match resume {
        Some(path) => {
            let (ck_hash, tensors) = read_checkpoint(path)?;
            if ck_hash != hash {
                return Err(CliError::HashMismatch { expected: hash, found: ck_hash });
            }
            let loaded = split_tensors(tensors)?;
            store = loaded.store;
            opt.import_state(loaded.step, &loaded.slots);
            start = loaded.step;
            loaded
                .normalizer
                .ok_or_else(|| CliError::Config("checkpoint lacks normalizer tensors".into()))?
        }
        None => {
            let mut rng = substream(cfg.seed, "init", 0);
            spec.init_params(&assets, &mut store, &mut rng);
            fit_normalizer(cfg, &records)
        }
    };

    fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join("metrics.csv");
    let checkpoint_path = out_dir.join("checkpoint.ispc");

    let mut rows = String::from("step,loss,grad_norm\n");
    let mut first_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    for step in start..cfg.train_steps as u64 {
        let (loss, grad_norm) = train_step(
            cfg, &spec, &assets, &schedule, &data, &normalizer, &mut store, &mut opt, step,
        )?;
        if first_loss.is_nan() {
            first_loss = loss;
        }
        final_loss = loss;
        rows.push_str(&format!("{step},{loss:.17e},{grad_norm:.17e}\n"));
    }
    fs::write(&metrics_path, rows)?;

    let tensors = export_tensors(&store, &opt, &normalizer);
    write_checkpoint(&checkpoint_path, &hash, &tensors)?;
    Ok(TrainOutcome {
        steps: opt.step_count(),
        first_loss,
        final_loss,
        checkpoint_path,
        metrics_path,
    })
}
