//! Run configuration: a single JSON file, dotted `--set` overrides, and a
//! canonical hash that ties datasets and checkpoints to the settings that
//! produced them.

use std::fs;
use std::path::Path;

use isp_core::diffusion::{Ablations, NoiseSchedule, PolicySpec, Variant};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

/// How training rotates poses about the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    None,
    /// Angles drawn from the z-axis subgroup of the model's lattice group.
    Subgroup,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// "isp_so3", "isp_so2", or "baseline_plain".
    pub variant: String,
    pub sphere_off: bool,
    pub equi_enc_off: bool,
    pub equi_u_off: bool,
    /// Analysis bandwidth on the sphere.
    pub l_max: usize,
    /// "I60" or "C8"; must match the variant's symmetry group.
    pub lattice: String,
    pub horizon: usize,
    pub execute: usize,
    pub history: usize,
    pub image_hw: usize,
    pub nside: usize,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub ddim_steps: usize,
    pub seed: u64,
    pub dataset_path: String,
    pub demo_count: usize,
    pub tilt: bool,
    pub max_env_steps: usize,
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub augment: AugmentMode,
    pub enc_n1: usize,
    pub enc_n2: usize,
    pub enc_n3: usize,
    pub enc_out: usize,
    pub c_lat: usize,
    pub c_pro: usize,
    pub d_a: usize,
    pub unet_widths: [usize; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: "isp_so3".into(),
            sphere_off: false,
            equi_enc_off: false,
            equi_u_off: false,
            l_max: 3,
            lattice: "I60".into(),
            horizon: 16,
            execute: 8,
            history: 2,
            image_hw: 32,
            nside: 4,
            timesteps: 100,
            beta_start: 1e-3,
            beta_end: 0.15,
            ddim_steps: 16,
            seed: 0,
            dataset_path: "demos".into(),
            demo_count: 20,
            tilt: true,
            max_env_steps: 100,
            train_steps: 1500,
            batch_size: 8,
            learning_rate: 1e-3,
            weight_decay: 1e-6,
            augment: AugmentMode::Continuous,
            enc_n1: 4,
            enc_n2: 6,
            enc_n3: 8,
            enc_out: 8,
            c_lat: 6,
            c_pro: 3,
            d_a: 6,
            unet_widths: [10, 14, 18],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path, sets: &[String]) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)?;
        let value: Value = serde_json::from_str(&text)?;
        Self::from_value(value, sets)
    }

    pub fn from_value(value: Value, sets: &[String]) -> Result<Self, CliError> {
        // Overlay the file on the serialized defaults so `--set` can
        // address keys the file leaves implicit. Unknown keys survive the
        // overlay and still fail deserialization.
        let mut merged = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
        let given = match value {
            Value::Object(map) => map,
            _ => return Err(CliError::Config("config root must be a JSON object".into())),
        };
        let doc = merged.as_object_mut().expect("defaults form an object");
        for (k, v) in given {
            doc.insert(k, v);
        }
        for s in sets {
            apply_set(&mut merged, s)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(merged)?;
        cfg.normalize();
        cfg.validate()?;
        Ok(cfg)
    }

    /// The plain baseline has nothing left to ablate; dropping the flags
    /// here keeps its hash independent of switches it ignores.
    pub fn normalize(&mut self) {
        if self.variant == "baseline_plain" {
            self.sphere_off = false;
            self.equi_enc_off = false;
            self.equi_u_off = false;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        match self.variant.as_str() {
            "isp_so3" => {
                if self.lattice != "I60" {
                    return bad(format!("isp_so3 runs on the I60 lattice, not {}", self.lattice));
                }
            }
            "isp_so2" => {
                if self.lattice != "C8" {
                    return bad(format!("isp_so2 runs on the C8 lattice, not {}", self.lattice));
                }
            }
            "baseline_plain" => {}
            v => return bad(format!("unknown variant {v:?}")),
        }
        if self.lattice != "I60" && self.lattice != "C8" {
            return bad(format!("unknown lattice {:?}", self.lattice));
        }
        if self.horizon == 0 || self.horizon % 4 != 0 {
            return bad(format!("horizon {} must be a positive multiple of 4", self.horizon));
        }
        if self.execute == 0 || self.execute > self.horizon {
            return bad(format!(
                "execute {} must lie in 1..={}",
                self.execute, self.horizon
            ));
        }
        if self.history == 0 {
            return bad("history must be at least 1".into());
        }
        if self.image_hw < 8 || self.image_hw % 4 != 0 {
            return bad(format!("image size {} must be a multiple of 4, at least 8", self.image_hw));
        }
        if !matches!(self.nside, 1 | 2 | 4) {
            return bad(format!("nside {} not in {{1, 2, 4}}", self.nside));
        }
        if self.l_max == 0 || self.l_max > 6 {
            return bad(format!("bandwidth {} out of range 1..=6", self.l_max));
        }
        if self.timesteps == 0 || self.ddim_steps == 0 || self.ddim_steps > self.timesteps {
            return bad(format!(
                "ddim steps {} must lie in 1..=timesteps {}",
                self.ddim_steps, self.timesteps
            ));
        }
        if !(self.beta_start > 0.0 && self.beta_start < self.beta_end && self.beta_end < 1.0) {
            return bad(format!(
                "beta range ({}, {}) must satisfy 0 < start < end < 1",
                self.beta_start, self.beta_end
            ));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning rate must be positive, weight decay non-negative".into());
        }
        Ok(())
    }

    pub fn variant_enum(&self) -> Variant {
        match self.variant.as_str() {
            "isp_so3" => Variant::IspSo3,
            "isp_so2" => Variant::IspSo2,
            _ => Variant::BaselinePlain,
        }
    }

    fn l_latent(&self) -> usize {
        (self.l_max - 1).clamp(1, 2)
    }

    pub fn policy_spec(&self) -> PolicySpec {
        PolicySpec {
            variant: self.variant_enum(),
            ablations: Ablations {
                sphere_off: self.sphere_off,
                equi_enc_off: self.equi_enc_off,
                equi_u_off: self.equi_u_off,
            },
            image_hw: self.image_hw,
            history: self.history,
            horizon: self.horizon,
            l_sph: self.l_max,
            l_latent: self.l_latent(),
            nside: self.nside,
            enc_n1: self.enc_n1,
            enc_n2: self.enc_n2,
            enc_n3: self.enc_n3,
            enc_out: self.enc_out,
            c_lat: self.c_lat,
            c_pro: self.c_pro,
            d_a: self.d_a,
            unet_widths: self.unet_widths,
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, CliError> {
        Ok(NoiseSchedule::ddpm_linear(self.timesteps, self.beta_start, self.beta_end)?)
    }

    pub fn env_config(&self) -> isp_core::env::EnvConfig {
        isp_core::env::EnvConfig {
            image_hw: self.image_hw,
            tilt: self.tilt,
            max_steps: self.max_env_steps,
        }
    }

    /// Hash of the canonical JSON form. serde_json sorts object keys, so
    /// the digest does not depend on field order in the source file.
    pub fn canonical_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let text = serde_json::to_string(&value).expect("value serializes");
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        let digest = h.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Applies one `key=value` override to the raw JSON document. Dotted keys
/// descend into objects and index into arrays; values parse as JSON first
/// and fall back to a bare string.
pub fn apply_set(doc: &mut Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {spec:?} is not key=value")))?;
    let parsed: Value = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
    if !doc.is_object() {
        return Err(CliError::Config("config root must be a JSON object".into()));
    }
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        if last {
            match cur {
                Value::Object(map) => {
                    map.insert(part.to_string(), parsed);
                }
                Value::Array(items) => {
                    let idx: usize = part
                        .parse()
                        .map_err(|_| CliError::Config(format!("bad array index {part:?}")))?;
                    if idx >= items.len() {
                        return Err(CliError::Config(format!(
                            "index {idx} out of range for {path:?}"
                        )));
                    }
                    items[idx] = parsed;
                }
                _ => return Err(CliError::Config(format!("cannot set {path:?} inside a scalar"))),
            }
            return Ok(());
        }
        cur = match cur {
            Value::Object(map) => map
                .get_mut(*part)
                .ok_or_else(|| CliError::Config(format!("unknown config key {path:?}")))?,
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| CliError::Config(format!("bad array index {part:?}")))?;
                items
                    .get_mut(idx)
                    .ok_or_else(|| CliError::Config(format!("index {idx} out of range")))?
            }
            _ => return Err(CliError::Config(format!("cannot descend into scalar at {part:?}"))),
        };
    }
    unreachable!("split never yields an empty part list");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_and_validates() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn the_hash_ignores_field_order() {
        let a: Value = serde_json::from_str(r#"{"seed": 7, "variant": "isp_so3"}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"variant": "isp_so3", "seed": 7}"#).unwrap();
        let ca = RunConfig::from_value(a, &[]).unwrap();
        let cb = RunConfig::from_value(b, &[]).unwrap();
        assert_eq!(ca.canonical_hash(), cb.canonical_hash());
    }

    #[test]
    fn overrides_change_the_hash() {
        let base = RunConfig::from_value(serde_json::json!({}), &[]).unwrap();
        let tweaked =
            RunConfig::from_value(serde_json::json!({}), &["seed=9".to_string()]).unwrap();
        assert_eq!(tweaked.seed, 9);
        assert_ne!(base.canonical_hash(), tweaked.canonical_hash());
    }

    #[test]
    fn overrides_reach_nested_array_slots() {
        let cfg = RunConfig::from_value(
            serde_json::json!({}),
            &["unet_widths.1=99".to_string(), "augment=none".to_string()],
        )
        .unwrap();
        assert_eq!(cfg.unet_widths, [10, 99, 18]);
        assert_eq!(cfg.augment, AugmentMode::None);
    }

    #[test]
    fn the_baseline_drops_ablation_flags_before_hashing() {
        let with = RunConfig::from_value(
            serde_json::json!({"variant": "baseline_plain", "sphere_off": true}),
            &[],
        )
        .unwrap();
        let without =
            RunConfig::from_value(serde_json::json!({"variant": "baseline_plain"}), &[]).unwrap();
        assert!(!with.sphere_off);
        assert_eq!(with.canonical_hash(), without.canonical_hash());
    }

    #[test]
    fn unknown_keys_and_incoherent_lattices_are_rejected() {
        assert!(RunConfig::from_value(serde_json::json!({"sede": 1}), &[]).is_err());
        assert!(
            RunConfig::from_value(serde_json::json!({"variant": "isp_so3", "lattice": "C8"}), &[])
                .is_err()
        );
        assert!(RunConfig::from_value(serde_json::json!({"execute": 17}), &[]).is_err());
    }
}
