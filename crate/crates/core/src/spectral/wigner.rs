//! Wigner D-matrices in the real spherical-harmonic basis.
//!
//! Convention: coefficients of a signal transform covariantly under the left
//! regular action, (L_R f)(p) = f(R^-1 p) has coefficients D^l(R) c. The route
//! is ZYZ Euler angles -> closed-form little-d factorial sum -> unitary change
//! of basis from complex to real harmonics. The factorial sum is numerically
//! dependable through degree 16; callers wanting higher bandwidth need a
//! different evaluation scheme.

use super::harmonics::factorial;
use crate::so3::Rotation;
use ndarray::Array2;

pub const L_MAX_STABLE: usize = 16;

/// Real-basis blocks D^0 .. D^l_max for one rotation.
#[derive(Debug, Clone)]
pub struct WignerBlocks {
    pub l_max: usize,
    pub blocks: Vec<Array2<f64>>,
}

/// Total SO(3) Fourier dimension through l_max: sum of (2l+1)^2.
pub fn so3_dim(l_max: usize) -> usize {
    (0..=l_max).map(|l| (2 * l + 1) * (2 * l + 1)).sum()
}

/// Flat offset of degree block l inside an SO(3) coefficient vector.
pub fn so3_block_offset(l: usize) -> usize {
    if l == 0 {
        0
    } else {
        so3_dim(l - 1)
    }
}

/// Little-d matrix d^l_{m'm}(beta), indices ascending from -l, real-valued.
fn little_d(l: usize, beta: f64) -> Array2<f64> {
    let dim = 2 * l + 1;
    let (sh, ch) = ((beta / 2.0).sin(), (beta / 2.0).cos());
    let li = l as i64;
    let mut d = Array2::zeros((dim, dim));
    for mp in -li..=li {
        for m in -li..=li {
            let pref = (factorial((li + mp) as usize)
                * factorial((li - mp) as usize)
                * factorial((li + m) as usize)
                * factorial((li - m) as usize))
            .sqrt();
            let s_lo = 0.max(m - mp);
            let s_hi = (li + m).min(li - mp);
            let mut acc = 0.0;
            for s in s_lo..=s_hi {
                let sign = if (mp - m + s) % 2 == 0 { 1.0 } else { -1.0 };
                let denom = factorial((li + m - s) as usize)
                    * factorial(s as usize)
                    * factorial((mp - m + s) as usize)
                    * factorial((li - mp - s) as usize);
                let cpow = 2 * li + m - mp - 2 * s;
                let spow = mp - m + 2 * s;
                acc += sign / denom * ch.powi(cpow as i32) * sh.powi(spow as i32);
            }
            d[[(mp + li) as usize, (m + li) as usize]] = pref * acc;
        }
    }
    d
}

/// One real-basis block D^l(R).
///
/// Complex-basis transform: diag(e^{-i m' a}) d^l(b) diag(e^{-i m g}), then
/// the sandwich conj(U) M U^T with the sparse complex-to-real map U. All
/// imaginary parts cancel analytically; only real parts are assembled.
fn real_block(l: usize, alpha: f64, beta: f64, gamma: f64) -> Array2<f64> {
    let dim = 2 * l + 1;
    let li = l as i64;
    let d = little_d(l, beta);

    // U rows for real index r over complex columns {r, -r}:
    //   r = 0:   U[0, 0] = 1
    //   r > 0:   U[r, +r] = (-1)^r / sqrt2          U[r, -r] = 1 / sqrt2
    //   r < 0:   U[r, -r] = -i (-1)^{|r|} / sqrt2   U[r, +r]... see below
    // stored as (complex column m, re, im) pairs.
    let u_row = |r: i64| -> Vec<(i64, f64, f64)> {
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        if r == 0 {
            vec![(0, 1.0, 0.0)]
        } else if r > 0 {
            let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
            vec![(r, sign * inv_sqrt2, 0.0), (-r, inv_sqrt2, 0.0)]
        } else {
            let m = -r;
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            vec![(m, 0.0, -sign * inv_sqrt2), (-m, 0.0, inv_sqrt2)]
        }
    };

    let mut out = Array2::zeros((dim, dim));
    for rp in -li..=li {
        let left = u_row(rp); // will be conjugated below
        for r in -li..=li {
            let right = u_row(r);
            let mut acc_re = 0.0;
            for &(mp, lre, lim) in &left {
                // conj(U)[rp, mp]
                let (lre, lim) = (lre, -lim);
                for &(m, rre, rim) in &right {
                    let dval = d[[(mp + li) as usize, (m + li) as usize]];
                    let ang = -(mp as f64) * alpha - (m as f64) * gamma;
                    let (mre, mim) = (ang.cos() * dval, ang.sin() * dval);
                    // conjU * M * U, accumulate the real part.
                    let t_re = lre * mre - lim * mim;
                    let t_im = lre * mim + lim * mre;
                    acc_re += t_re * rre - t_im * rim;
                }
            }
            out[[(rp + li) as usize, (r + li) as usize]] = acc_re;
        }
    }
    out
}

/// Real-basis Wigner blocks for degrees 0..=l_max.
pub fn wigner_blocks(r: &Rotation, l_max: usize) -> WignerBlocks {
    assert!(l_max <= L_MAX_STABLE, "bandwidth above supported stability bound");
    let (alpha, beta, gamma) = r.to_euler_zyz();
    let blocks = (0..=l_max)
        .map(|l| real_block(l, alpha, beta, gamma))
        .collect();
    WignerBlocks { l_max, blocks }
}

impl WignerBlocks {
    /// Stacks the per-degree blocks into one block-diagonal matrix acting on
    /// a spherical coefficient vector of dimension (l_max + 1)^2.
    pub fn block_diag_sph(&self) -> Array2<f64> {
        let dim = super::harmonics::sh_dim(self.l_max);
        let mut out = Array2::zeros((dim, dim));
        let mut off = 0;
        for b in &self.blocks {
            let d = b.dim().0;
            for i in 0..d {
                for j in 0..d {
                    out[[off + i, off + j]] = b[[i, j]];
                }
            }
            off += d;
        }
        out
    }
}

/// Rotate spherical coefficients: each degree block c_l -> D^l(R) c_l.
/// Layout of `coeffs`: [channels, (l_max+1)^2].
pub fn rotate_sph_coeffs(coeffs: &Array2<f64>, l_max: usize, r: &Rotation) -> Array2<f64> {
    let w = wigner_blocks(r, l_max);
    let mut out = coeffs.clone();
    let channels = coeffs.dim().0;
    let mut off = 0;
    for l in 0..=l_max {
        let d = 2 * l + 1;
        for ch in 0..channels {
            for i in 0..d {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += w.blocks[l][[i, j]] * coeffs[[ch, off + j]];
                }
                out[[ch, off + i]] = acc;
            }
        }
        off += d;
    }
    out
}

/// Rotate SO(3) Fourier blocks under the left action: F_l -> D^l(R) F_l.
/// Layout of `coeffs`: [channels, sum (2l+1)^2], row-major inside each block.
pub fn rotate_so3_coeffs(coeffs: &Array2<f64>, l_max: usize, r: &Rotation) -> Array2<f64> {
    let w = wigner_blocks(r, l_max);
    let mut out = coeffs.clone();
    let channels = coeffs.dim().0;
    let mut off = 0;
    for l in 0..=l_max {
        let d = 2 * l + 1;
        for ch in 0..channels {
            for col in 0..d {
                for i in 0..d {
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += w.blocks[l][[i, j]] * coeffs[[ch, off + j * d + col]];
                    }
                    out[[ch, off + i * d + col]] = acc;
                }
            }
        }
        off += d * d;
    }
    out
}
