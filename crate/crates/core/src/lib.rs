//! Core library for an SO(3)-equivariant eye-in-hand visuomotor policy stack:
//! rotation algebra, spherical/rotation-group spectral transforms, a learnable
//! image-to-sphere projection, equivariant network layers on a reverse-mode
//! tape, a diffusion action head, and a small rendered manipulation testbed.

pub mod diffusion;
pub mod env;
pub mod io;
pub mod nn;
pub mod so3;
pub mod spectral;
pub mod sphere;
pub mod util;
pub mod verify;
