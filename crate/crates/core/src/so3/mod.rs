pub mod finite;
pub mod rotation;

pub use finite::{FiniteGroup, GroupError, SamplingSet};
pub use rotation::{Rotation, RotationError};
