//! Simulated grasp-and-lift testbed: scene dynamics, wrist-camera
//! renderer, and a scripted expert.

mod expert;
mod render;
mod scene;

pub use expert::{expert_action, expert_episode, replay, Episode};
pub use render::{render, FOV_DEG};
pub use scene::{
    clamp_rotation, clamp_translation, rotate_scene, sample_scene, step, EnvConfig, EnvError,
    SceneState, GRASP_POS_TOL, GRASP_ROT_TOL, LIFT_SUCCESS, STEP_POS_CLAMP, STEP_ROT_CLAMP,
    WORKSPACE_HALF,
};
