//! Scene state and dynamics for the desk-scale grasping testbed.
//!
//! A free-flying gripper with a wrist camera moves over a plane that holds
//! one colored target. There is no contact physics: the gripper teleports
//! toward commanded poses under per-step displacement clamps, a grasp
//! snaps the target to the gripper when close enough, and success means
//! the target has been lifted clear of the plane. The plane's orientation
//! is part of the state, so rotating the entire scene (plane included) is
//! an exact symmetry of the world.

use crate::diffusion::{rot6d_decode, rot6d_encode, ActionError};
use crate::so3::Rotation;
use rand::Rng;
use thiserror::Error;

pub const WORKSPACE_HALF: f64 = 0.5;
pub const STEP_POS_CLAMP: f64 = 0.05;
pub const STEP_ROT_CLAMP: f64 = 0.2;
pub const GRASP_POS_TOL: f64 = 0.03;
pub const GRASP_ROT_TOL: f64 = 0.3;
pub const LIFT_SUCCESS: f64 = 0.15;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("pose leaves the workspace box: ({0:.3}, {1:.3}, {2:.3})")]
    OutOfWorkspace(f64, f64, f64),
    #[error("target below the support plane: height {0:.4}")]
    BelowPlane(f64),
    #[error("replay diverged from the recorded episode at step {0}")]
    ReplayDiverged(usize),
    #[error(transparent)]
    Action(#[from] ActionError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneState {
    pub target_pos: [f64; 3],
    pub target_rot: Rotation,
    pub gripper_pos: [f64; 3],
    pub gripper_rot: Rotation,
    pub gripper_open: f64,
    pub grasped: bool,
    /// Orientation of the support plane (and of "up"); rotating the whole
    /// scene rotates this too, which is what keeps renders invariant.
    pub scene_rot: Rotation,
    /// Target pose in the gripper frame, fixed at the moment of grasping.
    pub grasp_rel: Option<([f64; 3], Rotation)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    pub image_hw: usize,
    /// Full 3D target orientations instead of yaw-only.
    pub tilt: bool,
    pub max_steps: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { image_hw: 64, tilt: false, max_steps: 100 }
    }
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale3(a: [f64; 3], k: f64) -> [f64; 3] {
    [a[0] * k, a[1] * k, a[2] * k]
}

fn norm3(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub(crate) fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl SceneState {
    /// Unit normal of the support plane, the scene's "up".
    pub fn up(&self) -> [f64; 3] {
        self.scene_rot.apply([0.0, 0.0, 1.0])
    }

    /// Signed height of the target centroid above the plane.
    pub fn target_height(&self) -> f64 {
        dot3(self.up(), self.target_pos)
    }

    pub fn is_success(&self) -> bool {
        self.grasped && self.target_height() >= LIFT_SUCCESS
    }

    /// Grasp pose: at the target centroid, tool axis pointing into the
    /// target's underside so an upright target is approached from above.
    pub fn grasp_frame(&self) -> ([f64; 3], Rotation) {
        (self.target_pos, self.target_rot.compose(&Rotation::ry(std::f64::consts::PI)))
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        for p in [self.gripper_pos, self.target_pos] {
            for v in p {
                if v.abs() > WORKSPACE_HALF + 1e-9 {
                    return Err(EnvError::OutOfWorkspace(p[0], p[1], p[2]));
                }
            }
        }
        let h = self.target_height();
        if h < -1e-9 {
            return Err(EnvError::BelowPlane(h));
        }
        Ok(())
    }

    /// Current proprioception as one 10-vector matching the action layout.
    pub fn proprio(&self) -> [f64; 10] {
        let v = rot6d_encode(&self.gripper_rot);
        let mut out = [0.0; 10];
        out[..3].copy_from_slice(&self.gripper_pos);
        out[3..9].copy_from_slice(&v);
        out[9] = self.gripper_open;
        out
    }
}

/// Rotates the complete scene (plane, target, gripper) by g about the
/// world origin. The workspace box does not rotate, so poses that leave it
/// are an error.
pub fn rotate_scene(state: &SceneState, g: &Rotation) -> Result<SceneState, EnvError> {
    let out = SceneState {
        target_pos: g.apply(state.target_pos),
        target_rot: g.compose(&state.target_rot),
        gripper_pos: g.apply(state.gripper_pos),
        gripper_rot: g.compose(&state.gripper_rot),
        gripper_open: state.gripper_open,
        grasped: state.grasped,
        scene_rot: g.compose(&state.scene_rot),
        grasp_rel: state.grasp_rel,
    };
    out.validate()?;
    Ok(out)
}

fn clamp_box(p: [f64; 3]) -> [f64; 3] {
    [
        p[0].clamp(-WORKSPACE_HALF, WORKSPACE_HALF),
        p[1].clamp(-WORKSPACE_HALF, WORKSPACE_HALF),
        p[2].clamp(-WORKSPACE_HALF, WORKSPACE_HALF),
    ]
}

/// Clamped move toward a commanded position: at most `limit` meters.
pub fn clamp_translation(from: [f64; 3], to: [f64; 3], limit: f64) -> [f64; 3] {
    let d = sub3(to, from);
    let n = norm3(d);
    if n <= limit {
        to
    } else {
        add3(from, scale3(d, limit / n))
    }
}

/// Clamped re-orientation toward a commanded rotation: at most `limit`
/// radians along the geodesic.
pub fn clamp_rotation(from: &Rotation, to: &Rotation, limit: f64) -> Rotation {
    let rel = from.inverse().compose(to);
    let (axis, angle) = rel.to_axis_angle();
    if angle <= limit {
        *to
    } else {
        from.compose(&Rotation::from_axis_angle(axis, limit).expect("unit axis"))
    }
}

/// Advances the scene by one absolute 10-D command. Displacements are
/// clamped per step, out-of-box positions are clamped to the box, and a
/// closing gripper within tolerance of the grasp frame picks the target
/// up rigidly.
pub fn step(state: &SceneState, action: &[f64; 10]) -> Result<SceneState, EnvError> {
    let cmd_pos = [action[0], action[1], action[2]];
    let cmd_rot = rot6d_decode(&[action[3], action[4], action[5], action[6], action[7], action[8]])?;
    let cmd_open = action[9].clamp(0.0, 1.0);

    let new_pos = clamp_box(clamp_translation(state.gripper_pos, cmd_pos, STEP_POS_CLAMP));
    let new_rot = clamp_rotation(&state.gripper_rot, &cmd_rot, STEP_ROT_CLAMP);

    let mut out = SceneState {
        gripper_pos: new_pos,
        gripper_rot: new_rot,
        gripper_open: cmd_open,
        ..*state
    };

    if out.grasped {
        if cmd_open >= 0.5 {
            out.grasped = false;
            out.grasp_rel = None;
        }
    } else if cmd_open < 0.5 {
        let (gp, gr) = state.grasp_frame();
        let close_enough = norm3(sub3(out.gripper_pos, gp)) <= GRASP_POS_TOL
            && out.gripper_rot.geodesic_distance(&gr) <= GRASP_ROT_TOL;
        if close_enough {
            out.grasped = true;
            let inv = out.gripper_rot.inverse();
            out.grasp_rel = Some((
                inv.apply(sub3(state.target_pos, out.gripper_pos)),
                inv.compose(&state.target_rot),
            ));
        }
    }

    if out.grasped {
        let (rel_p, rel_r) = out.grasp_rel.expect("grasp transform");
        out.target_pos = add3(out.gripper_pos, out.gripper_rot.apply(rel_p));
        out.target_rot = out.gripper_rot.compose(&rel_r);
    }
    Ok(out)
}

/// Draws an initial scene: target in a 0.3 m square on the plane with a
/// random yaw (plus a bounded 3D tilt in tilt mode), gripper hovering
/// above with a mild random offset from straight-down.
pub fn sample_scene<R: Rng>(cfg: &EnvConfig, rng: &mut R) -> SceneState {
    let tau = std::f64::consts::TAU;
    let tx = rng.gen_range(-0.15..0.15);
    let ty = rng.gen_range(-0.15..0.15);
    let yaw = rng.gen_range(0.0..tau);
    let mut target_rot = Rotation::rz(yaw);
    if cfg.tilt {
        let axis_yaw = rng.gen_range(0.0..tau);
        let tilt = rng.gen_range(0.0..(60f64).to_radians());
        let axis = [axis_yaw.cos(), axis_yaw.sin(), 0.0];
        target_rot = Rotation::from_axis_angle(axis, tilt).unwrap().compose(&target_rot);
    }

    let gx = rng.gen_range(-0.10..0.10);
    let gy = rng.gen_range(-0.10..0.10);
    let gz = rng.gen_range(0.25..0.35);
    let look_down = Rotation::ry(std::f64::consts::PI);
    let wobble_axis_yaw = rng.gen_range(0.0..tau);
    let wobble = rng.gen_range(0.0..(15f64).to_radians());
    let wobble_rot = Rotation::from_axis_angle(
        [wobble_axis_yaw.cos(), wobble_axis_yaw.sin(), 0.0],
        wobble,
    )
    .unwrap();
    let gripper_rot = wobble_rot
        .compose(&Rotation::rz(rng.gen_range(0.0..tau)))
        .compose(&look_down);

    SceneState {
        target_pos: [tx, ty, 0.05],
        target_rot,
        gripper_pos: [gx, gy, gz],
        gripper_rot,
        gripper_open: 1.0,
        grasped: false,
        scene_rot: Rotation::IDENTITY,
        grasp_rel: None,
    }
}
