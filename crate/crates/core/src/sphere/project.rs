//! Learnable projection of 2D feature maps onto sphere grid samples.
//!
//! Each grid point takes a weighted aggregate of the whole feature map.
//! Weights start from a geometric prior: a Gaussian bump of one-pixel
//! width around the orthographic footprint of the point, with the front
//! hemisphere's (x, y) disc mapped uniformly onto the image square.
//! Back-hemisphere points carry no image content and stay zero.

use super::grid::{SphereError, SphereGrid};
use ndarray::{Array2, Array3};

#[derive(Debug, Clone)]
pub struct ProjectionWeights {
    /// One row per grid point, one column per feature-map pixel.
    pub w: Array2<f64>,
}

impl ProjectionWeights {
    pub fn zeros(num_points: usize, h: usize, w: usize) -> Self {
        Self { w: Array2::zeros((num_points, h * w)) }
    }

    /// Gaussian-bump prior around each front point's orthographic footprint,
    /// rows normalized to unit sum; back-hemisphere rows are zero.
    pub fn geometric(grid: &SphereGrid, h: usize, w: usize) -> Self {
        let mut m = Array2::zeros((grid.len(), h * w));
        let sigma = 1.0f64;
        for (p, &(theta, phi)) in grid.points.iter().enumerate() {
            if !grid.hemisphere_mask[p] {
                continue;
            }
            let st = theta.sin();
            let (x, y) = (st * phi.cos(), st * phi.sin());
            let px = (x + 1.0) / 2.0 * (w as f64 - 1.0);
            let py = (y + 1.0) / 2.0 * (h as f64 - 1.0);
            let mut sum = 0.0;
            for iy in 0..h {
                for ix in 0..w {
                    let d2 = (ix as f64 - px).powi(2) + (iy as f64 - py).powi(2);
                    let v = (-d2 / (2.0 * sigma * sigma)).exp();
                    m[[p, iy * w + ix]] = v;
                    sum += v;
                }
            }
            for k in 0..h * w {
                m[[p, k]] /= sum;
            }
        }
        Self { w: m }
    }
}

/// Weighted aggregation of a feature map onto grid samples, one output row
/// per channel. Back-hemisphere points always come out zero.
pub fn project_to_sphere(
    features: &Array3<f64>,
    weights: &ProjectionWeights,
    grid: &SphereGrid,
) -> Result<Array2<f64>, SphereError> {
    let (c, h, w) = features.dim();
    let (rows, cols) = weights.w.dim();
    if rows != grid.len() || cols != h * w {
        return Err(SphereError::ShapeMismatch {
            context: "projection weights",
            expected: (grid.len(), h * w),
            got: (rows, cols),
        });
    }
    let flat = features
        .to_shape((c, h * w))
        .expect("contiguous feature map")
        .to_owned();
    let mut out = flat.dot(&weights.w.t());
    for (p, &keep) in grid.hemisphere_mask.iter().enumerate() {
        if !keep {
            for ch in 0..c {
                out[[ch, p]] = 0.0;
            }
        }
    }
    Ok(out)
}
