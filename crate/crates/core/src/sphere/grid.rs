//! Sphere sampling grids.
//!
//! The main grid is an equal-area ring pixelization with 12 n^2 pixels for
//! resolution parameter n: polar caps whose ring i holds 4i pixels at
//! z = 1 - i^2 / (3 n^2), and an equatorial belt of 4n-pixel rings at
//! z = 4/3 - 2i / (3n) with alternating half-step phase. Ring phases make
//! the point set exactly invariant under quarter turns about +z, which the
//! camera-roll invariance tests rely on. A Gauss-Legendre product grid
//! backs exact-quadrature tests.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SphereError {
    #[error("unsupported grid resolution nside={0}; expected 1, 2, or 4")]
    UnsupportedNside(usize),
    #[error("{context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridKind {
    HealpixLike { nside: usize },
    GaussLegendre { n_lat: usize, n_lon: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct SphereGrid {
    pub kind: GridKind,
    /// (theta, phi) per point; theta in [0, pi], phi in [0, 2 pi).
    pub points: Vec<(f64, f64)>,
    /// True where the point faces the camera (z_cam > 0).
    pub hemisphere_mask: Vec<bool>,
}

pub fn build_grid(kind: GridKind) -> Result<SphereGrid, SphereError> {
    let points = match kind {
        GridKind::HealpixLike { nside } => {
            if !matches!(nside, 1 | 2 | 4) {
                return Err(SphereError::UnsupportedNside(nside));
            }
            ring_pixel_centers(nside)
        }
        GridKind::GaussLegendre { n_lat, n_lon } => {
            let nodes = crate::spectral::gauss_legendre(n_lat);
            let mut pts = Vec::with_capacity(n_lat * n_lon);
            for &(x, _) in &nodes {
                let theta = x.acos();
                for j in 0..n_lon {
                    pts.push((theta, 2.0 * PI * j as f64 / n_lon as f64));
                }
            }
            pts
        }
    };
    // Epsilon keeps the equator ring (z = 0 up to acos/cos rounding) out of
    // the front hemisphere.
    let hemisphere_mask = points.iter().map(|&(theta, _)| theta.cos() > 1e-12).collect();
    Ok(SphereGrid { kind, points, hemisphere_mask })
}

impl SphereGrid {
    pub fn healpix_like(nside: usize) -> Result<Self, SphereError> {
        build_grid(GridKind::HealpixLike { nside })
    }

    pub fn gauss_legendre(n_lat: usize, n_lon: usize) -> Self {
        build_grid(GridKind::GaussLegendre { n_lat, n_lon }).expect("infallible kind")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Cartesian unit vectors, one row per point.
    pub fn unit_vectors(&self) -> Vec<[f64; 3]> {
        self.points
            .iter()
            .map(|&(theta, phi)| {
                let st = theta.sin();
                [st * phi.cos(), st * phi.sin(), theta.cos()]
            })
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("grid serializes")
    }
}

fn wrap_phi(phi: f64) -> f64 {
    let t = 2.0 * PI;
    let mut x = phi % t;
    if x < 0.0 {
        x += t;
    }
    if x >= t {
        x -= t;
    }
    x
}

/// Ring-scheme pixel centers, ring-major from the north pole.
fn ring_pixel_centers(n: usize) -> Vec<(f64, f64)> {
    let nf = n as f64;
    let mut pts = Vec::with_capacity(12 * n * n);
    for i in 1..n {
        let z = 1.0 - (i * i) as f64 / (3.0 * nf * nf);
        let theta = z.acos();
        for j in 0..4 * i {
            pts.push((theta, wrap_phi(PI / (2.0 * i as f64) * (j as f64 + 0.5))));
        }
    }
    for i in n..=3 * n {
        let z = 4.0 / 3.0 - 2.0 * i as f64 / (3.0 * nf);
        let theta = z.acos();
        let s = ((i - n + 1) % 2) as f64;
        for j in 0..4 * n {
            pts.push((theta, wrap_phi(PI / (2.0 * nf) * (j as f64 + 1.0 - s / 2.0))));
        }
    }
    for i in (1..n).rev() {
        let z = -(1.0 - (i * i) as f64 / (3.0 * nf * nf));
        let theta = z.acos();
        for j in 0..4 * i {
            pts.push((theta, wrap_phi(PI / (2.0 * i as f64) * (j as f64 + 0.5))));
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::substream;
    use rand::Rng;

    #[test]
    fn pixel_counts_match_resolution() {
        assert_eq!(SphereGrid::healpix_like(1).unwrap().len(), 12);
        assert_eq!(SphereGrid::healpix_like(2).unwrap().len(), 48);
        assert_eq!(SphereGrid::healpix_like(4).unwrap().len(), 192);
    }

    #[test]
    fn unsupported_resolution_is_rejected() {
        assert_eq!(
            SphereGrid::healpix_like(3).unwrap_err(),
            SphereError::UnsupportedNside(3)
        );
    }

    #[test]
    fn angles_stay_in_range() {
        for grid in [
            SphereGrid::healpix_like(4).unwrap(),
            SphereGrid::gauss_legendre(6, 13),
        ] {
            for &(theta, phi) in &grid.points {
                assert!((0.0..=PI).contains(&theta));
                assert!((0.0..2.0 * PI).contains(&phi));
            }
        }
    }

    #[test]
    fn quarter_turn_permutes_points() {
        let grid = SphereGrid::healpix_like(2).unwrap();
        let r = crate::so3::Rotation::rz(PI / 2.0);
        let vecs = grid.unit_vectors();
        for v in &vecs {
            let rv = r.apply(*v);
            let best = vecs
                .iter()
                .map(|u| {
                    (u[0] - rv[0]).powi(2) + (u[1] - rv[1]).powi(2) + (u[2] - rv[2]).powi(2)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-24, "no partner under quarter turn: {best:e}");
        }
    }

    #[test]
    fn voronoi_areas_are_near_equal() {
        // Monte-Carlo nearest-center cell areas. The quad pixels of the
        // pixelization are exactly equal-area; the Voronoi cells of the
        // centers are not: at this resolution the polar cells run ~6% large
        // (measured 6.3% max with 2M samples) while belt cells stay within
        // 5%. Bounds pinned from that measurement.
        let grid = SphereGrid::healpix_like(2).unwrap();
        let vecs = grid.unit_vectors();
        let mut rng = substream(7, "voronoi-mc", 0);
        let total = 2_000_000usize;
        let mut counts = vec![0usize; vecs.len()];
        for _ in 0..total {
            let z: f64 = rng.gen_range(-1.0..1.0);
            let phi: f64 = rng.gen_range(0.0..2.0 * PI);
            let s = (1.0 - z * z).sqrt();
            let p = [s * phi.cos(), s * phi.sin(), z];
            let mut best = 0;
            let mut best_dot = f64::NEG_INFINITY;
            for (k, u) in vecs.iter().enumerate() {
                let d = u[0] * p[0] + u[1] * p[1] + u[2] * p[2];
                if d > best_dot {
                    best_dot = d;
                    best = k;
                }
            }
            counts[best] += 1;
        }
        let expected = total as f64 / vecs.len() as f64;
        let mut sum_abs = 0.0;
        for (k, &c) in counts.iter().enumerate() {
            let rel = (c as f64 - expected).abs() / expected;
            sum_abs += rel;
            let cap = k < 4 || k >= 44;
            let bound = if cap { 0.08 } else { 0.05 };
            assert!(rel < bound, "pixel {k} area off by {rel:.3}");
        }
        assert!(sum_abs / (vecs.len() as f64) < 0.03);
    }

    #[test]
    fn hemisphere_mask_tracks_z() {
        // Rings at z = 11/12, 2/3, 1/3 face the camera; the equator ring
        // (z = 0) and everything below do not.
        let grid = SphereGrid::healpix_like(2).unwrap();
        let mut front = 0;
        for (k, &(theta, _)) in grid.points.iter().enumerate() {
            assert_eq!(grid.hemisphere_mask[k], theta.cos() > 1e-12);
            if grid.hemisphere_mask[k] {
                front += 1;
            }
        }
        assert_eq!(front, 20);
    }

    #[test]
    fn json_export_round_trips_points() {
        let grid = SphereGrid::healpix_like(1).unwrap();
        let v = grid.to_json();
        assert_eq!(v["points"].as_array().unwrap().len(), 12);
        assert_eq!(v["kind"]["nside"], 1);
    }
}
