//! Sphere grids, image-to-sphere projection, and the roll correction.

mod correct;
mod grid;
mod project;

pub use correct::equivariance_correction;
pub use grid::{build_grid, GridKind, SphereError, SphereGrid};
pub use project::{project_to_sphere, ProjectionWeights};
