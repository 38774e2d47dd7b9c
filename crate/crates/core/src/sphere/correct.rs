//! World-frame correction of camera-frame spherical coefficients.
//!
//! The camera sees the scene in its own frame; rotating the coefficients by
//! the camera orientation re-expresses them in the world frame, so a global
//! rotation g of scene and camera together moves the corrected signal by
//! exactly g, and a pure roll about the optical axis cancels entirely.

use crate::so3::Rotation;
use crate::spectral::SphericalCoeffs;

/// Rotate camera-frame coefficients into the world frame by the camera
/// orientation `r_x`.
pub fn equivariance_correction(c: &SphericalCoeffs, r_x: &Rotation) -> SphericalCoeffs {
    c.rotate(r_x)
}
