//! Rotations as canonical unit quaternions.
//!
//! Every constructor returns the canonical representative of {q, -q}: w >= 0,
//! and when w == 0 the first nonzero imaginary component is positive. Euler
//! conversions use the ZYZ convention throughout: R = Rz(alpha) Ry(beta) Rz(gamma).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RotationError {
    #[error("quaternion norm {0} outside [1 - 1e-6, 1 + 1e-6]")]
    NonUnitQuaternion(f64),
    #[error("axis norm {0} too small to define a rotation axis")]
    DegenerateAxis(f64),
    #[error("matrix is not a rotation (orthonormality defect {0})")]
    NotARotation(f64),
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub fn identity() -> Self {
        Self::IDENTITY
    }

    /// Validates the norm, then renormalizes exactly and canonicalizes the sign.
    pub fn from_quat(w: f64, x: f64, y: f64, z: f64) -> Result<Self, RotationError> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
            return Err(RotationError::NonUnitQuaternion(n));
        }
        // Leave already-unit quaternions untouched so canonicalization is
        // bitwise idempotent.
        if (n - 1.0).abs() <= 1e-12 {
            Ok(Self { w, x, y, z }.canonicalized())
        } else {
            Ok(Self { w: w / n, x: x / n, y: y / n, z: z / n }.canonicalized())
        }
    }

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Result<Self, RotationError> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if n < 1e-12 {
            return Err(RotationError::DegenerateAxis(n));
        }
        let (s, c) = (angle / 2.0).sin_cos();
        Ok(Self {
            w: c,
            x: s * axis[0] / n,
            y: s * axis[1] / n,
            z: s * axis[2] / n,
        }
        .canonicalized())
    }

    pub fn rx(angle: f64) -> Self {
        Self::from_axis_angle([1.0, 0.0, 0.0], angle).unwrap()
    }

    pub fn ry(angle: f64) -> Self {
        Self::from_axis_angle([0.0, 1.0, 0.0], angle).unwrap()
    }

    pub fn rz(angle: f64) -> Self {
        Self::from_axis_angle([0.0, 0.0, 1.0], angle).unwrap()
    }

    fn canonicalized(self) -> Self {
        let Self { w, x, y, z } = self;
        let flip = if w != 0.0 {
            w < 0.0
        } else if x != 0.0 {
            x < 0.0
        } else if y != 0.0 {
            y < 0.0
        } else {
            z < 0.0
        };
        if flip {
            Self { w: -w, x: -x, y: -y, z: -z }
        } else {
            // Normalize -0.0 so canonical forms are bitwise stable.
            Self { w: w + 0.0, x: x + 0.0, y: y + 0.0, z: z + 0.0 }
        }
    }

    /// Hamilton product: (self * other) applies `other` first, then `self`.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        let (aw, ax, ay, az) = (self.w, self.x, self.y, self.z);
        let (bw, bx, by, bz) = (other.w, other.x, other.y, other.z);
        Rotation {
            w: aw * bw - ax * bx - ay * by - az * bz,
            x: aw * bx + ax * bw + ay * bz - az * by,
            y: aw * by - ax * bz + ay * bw + az * bx,
            z: aw * bz + ax * by - ay * bx + az * bw,
        }
        .canonicalized()
    }

    pub fn inverse(&self) -> Rotation {
        Rotation { w: self.w, x: -self.x, y: -self.y, z: -self.z }.canonicalized()
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        // v + 2 q x (q x v + w v), with q the imaginary part.
        let q = [self.x, self.y, self.z];
        let t = [
            2.0 * (q[1] * v[2] - q[2] * v[1]),
            2.0 * (q[2] * v[0] - q[0] * v[2]),
            2.0 * (q[0] * v[1] - q[1] * v[0]),
        ];
        [
            v[0] + self.w * t[0] + q[1] * t[2] - q[2] * t[1],
            v[1] + self.w * t[1] + q[2] * t[0] - q[0] * t[2],
            v[2] + self.w * t[2] + q[0] * t[1] - q[1] * t[0],
        ]
    }

    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    pub fn from_matrix(m: &[[f64; 3]; 3]) -> Result<Self, RotationError> {
        let mut defect: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = 0.0;
                for k in 0..3 {
                    dot += m[k][i] * m[k][j];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                defect = defect.max((dot - target).abs());
            }
        }
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        defect = defect.max((det - 1.0).abs());
        if defect > 1e-8 {
            return Err(RotationError::NotARotation(defect));
        }

        // Shepperd's method: branch on the largest diagonal combination.
        let tr = m[0][0] + m[1][1] + m[2][2];
        let (w, x, y, z);
        if tr > m[0][0] && tr > m[1][1] && tr > m[2][2] {
            let s = (tr + 1.0).sqrt() * 2.0;
            w = 0.25 * s;
            x = (m[2][1] - m[1][2]) / s;
            y = (m[0][2] - m[2][0]) / s;
            z = (m[1][0] - m[0][1]) / s;
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            w = (m[2][1] - m[1][2]) / s;
            x = 0.25 * s;
            y = (m[0][1] + m[1][0]) / s;
            z = (m[0][2] + m[2][0]) / s;
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            w = (m[0][2] - m[2][0]) / s;
            x = (m[0][1] + m[1][0]) / s;
            y = 0.25 * s;
            z = (m[1][2] + m[2][1]) / s;
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            w = (m[1][0] - m[0][1]) / s;
            x = (m[0][2] + m[2][0]) / s;
            y = (m[1][2] + m[2][1]) / s;
            z = 0.25 * s;
        }
        let n = (w * w + x * x + y * y + z * z).sqrt();
        Ok(Self { w: w / n, x: x / n, y: y / n, z: z / n }.canonicalized())
    }

    /// Geodesic distance on SO(3) in radians, in [0, pi].
    pub fn geodesic_distance(&self, other: &Rotation) -> f64 {
        let d = self.inverse().compose(other);
        let v = (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
        2.0 * v.atan2(d.w.abs())
    }

    /// Rotation angle in [0, pi] and a unit axis. The axis of the identity is
    /// reported as +z by convention.
    pub fn to_axis_angle(&self) -> ([f64; 3], f64) {
        let v = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        let angle = 2.0 * v.atan2(self.w.abs());
        if v < 1e-15 {
            ([0.0, 0.0, 1.0], angle)
        } else {
            ([self.x / v, self.y / v, self.z / v], angle)
        }
    }

    /// ZYZ Euler angles (alpha, beta, gamma) with beta in [0, pi]. At the
    /// gimbal configurations beta = 0 or beta = pi, gamma is fixed to 0 and
    /// alpha carries the whole z-rotation.
    ///
    /// Extracted from the quaternion: for R = Rz(a) Ry(b) Rz(g),
    /// (w, z) = cos(b/2) (cos u, sin u) and (x, y) = sin(b/2) (-sin v, cos v)
    /// with u = (a + g)/2, v = (a - g)/2. atan2 on these stays exact at both
    /// poles, unlike the matrix route whose sqrt(1 - m22^2) loses half the
    /// significant digits near b = 0 or pi.
    pub fn to_euler_zyz(&self) -> (f64, f64, f64) {
        let cos_half = (self.w * self.w + self.z * self.z).sqrt();
        let sin_half = (self.x * self.x + self.y * self.y).sqrt();
        let beta = 2.0 * sin_half.atan2(cos_half);
        let u = if cos_half < 1e-15 { 0.0 } else { self.z.atan2(self.w) };
        let v = if sin_half < 1e-15 { 0.0 } else { (-self.x).atan2(self.y) };
        if sin_half < 1e-15 {
            (wrap_angle(2.0 * u), beta, 0.0)
        } else if cos_half < 1e-15 {
            (wrap_angle(2.0 * v), beta, 0.0)
        } else {
            (wrap_angle(u + v), beta, wrap_angle(u - v))
        }
    }

    pub fn from_euler_zyz(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self::rz(alpha).compose(&Self::ry(beta)).compose(&Self::rz(gamma))
    }

    /// Haar-uniform random rotation.
    pub fn random<R: rand::Rng>(rng: &mut R) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        loop {
            let q: [f64; 4] = [
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            ];
            let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
            if n > 1e-3 {
                return Self { w: q[0] / n, x: q[1] / n, y: q[2] / n, z: q[3] / n }
                    .canonicalized();
            }
        }
    }
}
