//! Diffusion over action chunks: encodings, noise schedule, denoisers.

mod action;
mod policy;
mod schedule;

pub use action::{
    rot6d_decode, rot6d_encode, so2_pose_augment, to_absolute_frame, to_delta_frame, ActionChunk,
    ActionError, DecodedStep, Frame, Normalizer, Observation, STEP_DIM,
};
pub use policy::{
    rotate_steps_linear, sample_chunk, steps_from_flat, Ablations, ActInputs, Effective,
    ObsInputs, PolicyAssets, PolicyError, PolicySpec, SphereAssets, Variant,
};
pub use schedule::{standard_normal_vec, NoiseSchedule, ScheduleError};
