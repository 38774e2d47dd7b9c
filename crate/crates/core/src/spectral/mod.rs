pub mod coeffs;
pub mod harmonics;
pub mod linalg;
pub mod wigner;

pub use coeffs::{So3Coeffs, SphericalCoeffs};
pub use harmonics::{gauss_legendre, real_sh, sh_basis_row, sh_dim};
pub use linalg::{pinv_guarded, SpectralError, COND_LIMIT};
pub use wigner::{rotate_so3_coeffs, rotate_sph_coeffs, so3_dim, wigner_blocks, WignerBlocks};
