//! Scripted expert for the grasp-and-lift task, plus episode rollout and
//! replay helpers.
//!
//! The expert is a pure function of the scene state: hover above the
//! target along its approach axis, descend, close, lift. Every commanded
//! displacement stays strictly inside the per-step clamps so that the
//! recorded action stream, replayed through the dynamics, reproduces the
//! episode bit for bit.

use super::render::render;
use super::scene::{
    clamp_rotation, clamp_translation, dot3, sample_scene, step, EnvConfig, EnvError, SceneState,
    STEP_POS_CLAMP, STEP_ROT_CLAMP,
};
use crate::diffusion::rot6d_encode;
use crate::so3::Rotation;
use crate::util::substream;
use ndarray::Array3;

const HOVER_ABOVE: f64 = 0.12;
const DESCEND_POS_TOL: f64 = 0.02;
const DESCEND_ROT_TOL: f64 = 0.2;
const CLOSE_POS_TOL: f64 = 0.015;
const LIFT_TARGET: f64 = 0.18;

/// Margin keeping commanded displacements strictly under the clamps, so
/// the dynamics never alter the expert's commands.
const CLAMP_MARGIN: f64 = 1.0 - 1e-9;

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
    dot3(a, a).sqrt()
}

fn pack(pos: [f64; 3], rot: &Rotation, open: f64) -> [f64; 10] {
    let v = rot6d_encode(rot);
    let mut a = [0.0; 10];
    a[..3].copy_from_slice(&pos);
    a[3..9].copy_from_slice(&v);
    a[9] = open;
    a
}

/// One clamped move toward a goal pose, packed as an absolute command.
fn move_toward(s: &SceneState, goal_pos: [f64; 3], goal_rot: &Rotation, open: f64) -> [f64; 10] {
    let pos = clamp_translation(s.gripper_pos, goal_pos, STEP_POS_CLAMP * CLAMP_MARGIN);
    let rot = clamp_rotation(&s.gripper_rot, goal_rot, STEP_ROT_CLAMP * CLAMP_MARGIN);
    pack(pos, &rot, open)
}

/// The expert command for the current state. Stateless: the stage is
/// inferred from geometry alone.
pub fn expert_action(s: &SceneState) -> [f64; 10] {
    if s.is_success() {
        // Hold: success states are fixed points of the expert.
        return pack(s.gripper_pos, &s.gripper_rot, s.gripper_open);
    }

    let up = s.up();
    if s.grasped {
        // Lift straight up (in the scene's frame) until clear.
        let goal = add3(s.gripper_pos, scale3(up, LIFT_TARGET - s.target_height()));
        return move_toward(s, goal, &s.gripper_rot, 0.0);
    }

    let (gp, gr) = s.grasp_frame();
    // The approach axis: the tool points along gr * z, so backing off the
    // grasp pose means moving against it.
    let tool = gr.apply([0.0, 0.0, 1.0]);
    let hover = sub3(gp, scale3(tool, HOVER_ABOVE));

    let pos_err = norm3(sub3(s.gripper_pos, gp));
    let rot_err = s.gripper_rot.geodesic_distance(&gr);

    if pos_err <= CLOSE_POS_TOL && rot_err <= DESCEND_ROT_TOL {
        // In the grasp window: close in place.
        return pack(s.gripper_pos, &s.gripper_rot, 0.0);
    }

    // Distance along and off the approach line through gp.
    let rel = sub3(s.gripper_pos, gp);
    let along = dot3(rel, tool);
    let lateral = norm3(sub3(rel, scale3(tool, along)));
    let on_corridor = lateral <= DESCEND_POS_TOL
        && rot_err <= DESCEND_ROT_TOL
        && (-HOVER_ABOVE - 0.01..=0.0).contains(&along);
    if on_corridor {
        return move_toward(s, gp, &gr, 1.0);
    }

    move_toward(s, hover, &gr, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub seed: u64,
    pub initial: SceneState,
    /// Rendered wrist views, one per decision point, aligned with actions.
    pub images: Vec<Array3<f64>>,
    /// Gripper proprioception at each decision point.
    pub proprio: Vec<[f64; 10]>,
    pub actions: Vec<[f64; 10]>,
    pub success: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Rolls the scripted expert from a seeded random initial scene. Stops at
/// success or after `max_steps`.
pub fn expert_episode(cfg: &EnvConfig, seed: u64) -> Result<Episode, EnvError> {
    let mut rng = substream(seed, "episode", 0);
    let initial = sample_scene(cfg, &mut rng);
    let mut state = initial;
    let mut ep = Episode {
        seed,
        initial,
        images: Vec::new(),
        proprio: Vec::new(),
        actions: Vec::new(),
        success: false,
    };
    for _ in 0..cfg.max_steps {
        if state.is_success() {
            break;
        }
        let action = expert_action(&state);
        ep.images.push(render(&state, cfg.image_hw));
        ep.proprio.push(state.proprio());
        ep.actions.push(action);
        state = step(&state, &action)?;
    }
    ep.success = state.is_success();
    Ok(ep)
}

/// Replays an episode's actions through the dynamics and re-renders,
/// checking every stored observation bit for bit. Returns the final state.
pub fn replay(ep: &Episode, cfg: &EnvConfig) -> Result<SceneState, EnvError> {
    let mut state = ep.initial;
    for (i, action) in ep.actions.iter().enumerate() {
        let img = render(&state, cfg.image_hw);
        let same_pixels = img
            .iter()
            .zip(ep.images[i].iter())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        let same_proprio = state
            .proprio()
            .iter()
            .zip(ep.proprio[i].iter())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same_pixels || !same_proprio {
            return Err(EnvError::ReplayDiverged(i));
        }
        state = step(&state, action)?;
    }
    if state.is_success() != ep.success {
        return Err(EnvError::ReplayDiverged(ep.actions.len()));
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_cfg(tilt: bool) -> EnvConfig {
        EnvConfig { image_hw: 8, tilt, max_steps: 100 }
    }

    #[test]
    fn the_expert_solves_every_seeded_default_task() {
        let cfg = small_cfg(false);
        let mut total = 0usize;
        for seed in 0..100u64 {
            let ep = expert_episode(&cfg, seed).unwrap();
            assert!(ep.success, "seed {seed} failed after {} steps", ep.len());
            total += ep.len();
        }
        let mean = total as f64 / 100.0;
        assert!(mean < 80.0, "mean episode length {mean:.1}");
    }

    #[test]
    fn the_expert_solves_tilted_targets_too() {
        let cfg = small_cfg(true);
        for seed in 200..220u64 {
            let ep = expert_episode(&cfg, seed).unwrap();
            assert!(ep.success, "seed {seed} failed after {} steps", ep.len());
        }
    }

    #[test]
    fn success_states_are_fixed_points() {
        let cfg = small_cfg(false);
        let ep = expert_episode(&cfg, 7).unwrap();
        let mut state = replay(&ep, &cfg).unwrap();
        assert!(state.is_success());
        for _ in 0..5 {
            let next = step(&state, &expert_action(&state)).unwrap();
            assert_eq!(next, state);
            state = next;
        }
    }

    #[test]
    fn expert_commands_pass_through_the_clamps_unchanged() {
        let cfg = small_cfg(false);
        for seed in [3u64, 11, 42] {
            let mut rng = substream(seed, "episode", 0);
            let mut state = sample_scene(&cfg, &mut rng);
            for _ in 0..cfg.max_steps {
                if state.is_success() {
                    break;
                }
                let a = expert_action(&state);
                let next = step(&state, &a).unwrap();
                for d in 0..3 {
                    assert_abs_diff_eq!(next.gripper_pos[d], a[d], epsilon = 1e-12);
                }
                let cmd_rot =
                    crate::diffusion::rot6d_decode(&[a[3], a[4], a[5], a[6], a[7], a[8]]).unwrap();
                assert!(next.gripper_rot.geodesic_distance(&cmd_rot) < 1e-12);
                state = next;
            }
            assert!(state.is_success());
        }
    }

    #[test]
    fn episodes_replay_bit_exactly() {
        let cfg = small_cfg(false);
        let ep = expert_episode(&cfg, 19).unwrap();
        let end = replay(&ep, &cfg).unwrap();
        assert!(end.is_success());
        let again = expert_episode(&cfg, 19).unwrap();
        assert_eq!(ep, again);
    }

    #[test]
    fn lift_height_clears_the_success_threshold() {
        let cfg = small_cfg(false);
        let ep = expert_episode(&cfg, 31).unwrap();
        let end = replay(&ep, &cfg).unwrap();
        assert!(end.target_height() >= super::super::scene::LIFT_SUCCESS);
        assert!(end.grasped);
        // The held target must have moved rigidly with the gripper.
        let (_, rel) = end.grasp_rel.unwrap();
        let back = end.gripper_rot.compose(&rel);
        assert!(end.target_rot.geodesic_distance(&back) < 1e-9);
    }
}
