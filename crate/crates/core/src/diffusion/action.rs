//! Action chunks and their encodings.
//!
//! A chunk is a short horizon of absolute gripper targets, ten numbers per
//! step: position, the first two rotation-matrix columns, and a gripper
//! width. Diffusion treats the ten numbers as a flat vector; rotations are
//! re-orthogonalized only when a step is executed.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::so3::Rotation;

pub const STEP_DIM: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum ActionError {
    #[error("rot6d columns are degenerate (collinear or near-zero)")]
    DegenerateRotation,
    #[error("flat action length {got} is not a multiple of {STEP_DIM}")]
    BadFlatLength { got: usize },
}

/// First two columns of the rotation matrix, column-major.
pub fn rot6d_encode(r: &Rotation) -> [f64; 6] {
    let m = r.to_matrix();
    [m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]]
}

/// Gram-Schmidt the two columns, complete with a cross product.
pub fn rot6d_decode(v: &[f64; 6]) -> Result<Rotation, ActionError> {
    let a1 = [v[0], v[1], v[2]];
    let a2 = [v[3], v[4], v[5]];
    let n1 = (a1[0] * a1[0] + a1[1] * a1[1] + a1[2] * a1[2]).sqrt();
    if n1 < 1e-8 {
        return Err(ActionError::DegenerateRotation);
    }
    let b1 = [a1[0] / n1, a1[1] / n1, a1[2] / n1];
    let dot = b1[0] * a2[0] + b1[1] * a2[1] + b1[2] * a2[2];
    let p = [a2[0] - dot * b1[0], a2[1] - dot * b1[1], a2[2] - dot * b1[2]];
    let n2 = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    if n2 < 1e-8 {
        return Err(ActionError::DegenerateRotation);
    }
    let b2 = [p[0] / n2, p[1] / n2, p[2] / n2];
    let b3 = [
        b1[1] * b2[2] - b1[2] * b2[1],
        b1[2] * b2[0] - b1[0] * b2[2],
        b1[0] * b2[1] - b1[1] * b2[0],
    ];
    let m = [
        [b1[0], b2[0], b3[0]],
        [b1[1], b2[1], b3[1]],
        [b1[2], b2[2], b3[2]],
    ];
    Rotation::from_matrix(&m).map_err(|_| ActionError::DegenerateRotation)
}

/// One decoded step: position, orthogonal orientation, gripper in [0, 1].
#[derive(Debug, Clone, Copy)]
pub struct DecodedStep {
    pub pos: [f64; 3],
    pub rot: Rotation,
    pub grip: f64,
}

/// [n, 10] rows of raw step values.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionChunk {
    pub steps: Array2<f64>,
}

impl ActionChunk {
    pub fn new(steps: Array2<f64>) -> Self {
        assert_eq!(steps.ncols(), STEP_DIM, "ten values per step");
        Self { steps }
    }

    pub fn from_poses(poses: &[([f64; 3], Rotation, f64)]) -> Self {
        let mut steps = Array2::zeros((poses.len(), STEP_DIM));
        for (i, (p, r, g)) in poses.iter().enumerate() {
            let v = rot6d_encode(r);
            for d in 0..3 {
                steps[[i, d]] = p[d];
            }
            for d in 0..6 {
                steps[[i, 3 + d]] = v[d];
            }
            steps[[i, 9]] = *g;
        }
        Self { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.nrows() == 0
    }

    pub fn flat(&self) -> Array1<f64> {
        Array1::from_iter(self.steps.iter().copied())
    }

    pub fn from_flat(v: &Array1<f64>) -> Result<Self, ActionError> {
        if v.len() % STEP_DIM != 0 {
            return Err(ActionError::BadFlatLength { got: v.len() });
        }
        let n = v.len() / STEP_DIM;
        let steps = Array2::from_shape_vec((n, STEP_DIM), v.to_vec()).unwrap();
        Ok(Self { steps })
    }

    /// Decodes one row; the gripper is clamped here and only here.
    pub fn decode_step(&self, i: usize) -> Result<DecodedStep, ActionError> {
        let row = self.steps.row(i);
        let v = [row[3], row[4], row[5], row[6], row[7], row[8]];
        Ok(DecodedStep {
            pos: [row[0], row[1], row[2]],
            rot: rot6d_decode(&v)?,
            grip: row[9].clamp(0.0, 1.0),
        })
    }

    /// Rotates every step's position and orientation by g about the world
    /// origin; gripper widths are untouched.
    pub fn rotated(&self, g: &Rotation) -> Result<Self, ActionError> {
        let mut poses = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            let s = self.decode_step(i)?;
            poses.push((g.apply(s.pos), g.compose(&s.rot), self.steps[[i, 9]]));
        }
        Ok(Self::from_poses(&poses))
    }
}

/// Re-expresses an absolute chunk with each step relative to the previous
/// step's gripper frame (the observation pose seeds the recursion).
pub fn to_delta_frame(
    chunk: &ActionChunk,
    base_pos: [f64; 3],
    base_rot: &Rotation,
) -> Result<ActionChunk, ActionError> {
    let mut out = Vec::with_capacity(chunk.len());
    let mut prev_pos = base_pos;
    let mut prev_rot = *base_rot;
    for i in 0..chunk.len() {
        let s = chunk.decode_step(i)?;
        let world = [
            s.pos[0] - prev_pos[0],
            s.pos[1] - prev_pos[1],
            s.pos[2] - prev_pos[2],
        ];
        let dpos = prev_rot.inverse().apply(world);
        let drot = prev_rot.inverse().compose(&s.rot);
        out.push((dpos, drot, chunk.steps[[i, 9]]));
        prev_pos = s.pos;
        prev_rot = s.rot;
    }
    Ok(ActionChunk::from_poses(&out))
}

/// Inverse of [`to_delta_frame`].
pub fn to_absolute_frame(
    chunk: &ActionChunk,
    base_pos: [f64; 3],
    base_rot: &Rotation,
) -> Result<ActionChunk, ActionError> {
    let mut out = Vec::with_capacity(chunk.len());
    let mut prev_pos = base_pos;
    let mut prev_rot = *base_rot;
    for i in 0..chunk.len() {
        let s = chunk.decode_step(i)?;
        let world = prev_rot.apply(s.pos);
        let pos = [
            prev_pos[0] + world[0],
            prev_pos[1] + world[1],
            prev_pos[2] + world[2],
        ];
        let rot = prev_rot.compose(&s.rot);
        out.push((pos, rot, chunk.steps[[i, 9]]));
        prev_pos = pos;
        prev_rot = rot;
    }
    Ok(ActionChunk::from_poses(&out))
}

/// One proprioception frame.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub pos: [f64; 3],
    pub rot: Rotation,
    pub grip: f64,
}

/// What the policy sees at one control step: the wrist image as [3, h, w]
/// values in [0, 1] plus a short history of proprioception frames, oldest
/// first.
#[derive(Debug, Clone)]
pub struct Observation {
    pub image: ndarray::Array3<f64>,
    pub frames: Vec<Frame>,
}

/// Rotates gripper poses and the action chunk by Rz(theta) about the
/// world origin. The image stays untouched: jointly rotating gripper and
/// scene leaves the wrist view unchanged, which is exactly the symmetry
/// the augmentation exploits.
pub fn so2_pose_augment(
    obs: &Observation,
    chunk: &ActionChunk,
    theta: f64,
) -> Result<(Observation, ActionChunk), ActionError> {
    let g = Rotation::rz(theta);
    let frames = obs
        .frames
        .iter()
        .map(|f| Frame {
            pos: g.apply(f.pos),
            rot: g.compose(&f.rot),
            grip: f.grip,
        })
        .collect();
    Ok((
        Observation { image: obs.image.clone(), frames },
        chunk.rotated(&g)?,
    ))
}

/// Maps raw chunks to the diffusion working range and back. The rotating
/// coordinates share one scale with zero offset so the map commutes with
/// rotations; the gripper width, an invariant scalar, gets a full affine
/// map. The per-dimension variant is for models with no symmetry to
/// preserve.
#[derive(Debug, Clone, PartialEq)]
pub enum Normalizer {
    Isotropic {
        pos_scale: f64,
        grip_offset: f64,
        grip_scale: f64,
    },
    PerDim {
        offset: Array1<f64>,
        scale: Array1<f64>,
    },
}

impl Normalizer {
    pub fn fit_isotropic(chunks: &[ActionChunk]) -> Self {
        let mut max_pos = 1e-6f64;
        let mut grip_min = f64::INFINITY;
        let mut grip_max = f64::NEG_INFINITY;
        for c in chunks {
            for i in 0..c.len() {
                for d in 0..3 {
                    max_pos = max_pos.max(c.steps[[i, d]].abs());
                }
                grip_min = grip_min.min(c.steps[[i, 9]]);
                grip_max = grip_max.max(c.steps[[i, 9]]);
            }
        }
        if !grip_min.is_finite() {
            grip_min = 0.0;
            grip_max = 1.0;
        }
        let spread = (grip_max - grip_min).max(1e-6);
        Self::Isotropic {
            pos_scale: max_pos,
            grip_offset: (grip_min + grip_max) / 2.0,
            grip_scale: spread / 2.0,
        }
    }

    pub fn fit_per_dim(chunks: &[ActionChunk]) -> Self {
        let mut lo = Array1::from_elem(STEP_DIM, f64::INFINITY);
        let mut hi = Array1::from_elem(STEP_DIM, f64::NEG_INFINITY);
        for c in chunks {
            for i in 0..c.len() {
                for d in 0..STEP_DIM {
                    lo[d] = lo[d].min(c.steps[[i, d]]);
                    hi[d] = hi[d].max(c.steps[[i, d]]);
                }
            }
        }
        let mut offset = Array1::zeros(STEP_DIM);
        let mut scale = Array1::ones(STEP_DIM);
        for d in 0..STEP_DIM {
            if lo[d].is_finite() && hi[d].is_finite() {
                offset[d] = (lo[d] + hi[d]) / 2.0;
                scale[d] = ((hi[d] - lo[d]) / 2.0).max(1e-6);
            }
        }
        Self::PerDim { offset, scale }
    }

    pub fn normalize(&self, chunk: &ActionChunk) -> ActionChunk {
        let mut steps = chunk.steps.clone();
        match self {
            Self::Isotropic { pos_scale, grip_offset, grip_scale } => {
                for i in 0..steps.nrows() {
                    for d in 0..3 {
                        steps[[i, d]] /= pos_scale;
                    }
                    steps[[i, 9]] = (steps[[i, 9]] - grip_offset) / grip_scale;
                }
            }
            Self::PerDim { offset, scale } => {
                for i in 0..steps.nrows() {
                    for d in 0..STEP_DIM {
                        steps[[i, d]] = (steps[[i, d]] - offset[d]) / scale[d];
                    }
                }
            }
        }
        ActionChunk { steps }
    }

    pub fn denormalize(&self, chunk: &ActionChunk) -> ActionChunk {
        let mut steps = chunk.steps.clone();
        match self {
            Self::Isotropic { pos_scale, grip_offset, grip_scale } => {
                for i in 0..steps.nrows() {
                    for d in 0..3 {
                        steps[[i, d]] *= pos_scale;
                    }
                    steps[[i, 9]] = steps[[i, 9]] * grip_scale + grip_offset;
                }
            }
            Self::PerDim { offset, scale } => {
                for i in 0..steps.nrows() {
                    for d in 0..STEP_DIM {
                        steps[[i, d]] = steps[[i, d]] * scale[d] + offset[d];
                    }
                }
            }
        }
        ActionChunk { steps }
    }

    /// Position scale; the policy conditions proprioception with it so
    /// observation and action coordinates stay commensurate.
    pub fn position_scale(&self) -> f64 {
        match self {
            Self::Isotropic { pos_scale, .. } => *pos_scale,
            Self::PerDim { scale, .. } => (scale[0] + scale[1] + scale[2]) / 3.0,
        }
    }

    pub fn to_tensors(&self) -> Vec<(String, Vec<f64>)> {
        match self {
            Self::Isotropic { pos_scale, grip_offset, grip_scale } => vec![(
                "norm.isotropic".into(),
                vec![*pos_scale, *grip_offset, *grip_scale],
            )],
            Self::PerDim { offset, scale } => vec![
                ("norm.offset".into(), offset.to_vec()),
                ("norm.scale".into(), scale.to_vec()),
            ],
        }
    }

    pub fn from_tensors(map: &std::collections::BTreeMap<String, Vec<f64>>) -> Option<Self> {
        if let Some(v) = map.get("norm.isotropic") {
            return Some(Self::Isotropic {
                pos_scale: v[0],
                grip_offset: v[1],
                grip_scale: v[2],
            });
        }
        let offset = map.get("norm.offset")?;
        let scale = map.get("norm.scale")?;
        Some(Self::PerDim {
            offset: Array1::from(offset.clone()),
            scale: Array1::from(scale.clone()),
        })
    }
}
