//! Flat-shaded ray-cast renderer for the wrist camera.
//!
//! One primary ray per pixel from the gripper pose, optical axis along the
//! gripper's +z, square field of view of 130 degrees. The scene is the
//! support plane plus the target, an L-shaped prism built from two boxes
//! with a distinct color per face so orientation is visible. Shading is a
//! headlight term |n . d| against the ray direction, which depends only on
//! relative geometry; together with the plane stored as part of the scene
//! this makes renders exactly invariant under whole-scene rotations and
//! exactly covariant under camera rolls.

use super::scene::{dot3, SceneState};
use ndarray::Array3;

pub const FOV_DEG: f64 = 130.0;

const SKY: [f64; 3] = [0.07, 0.09, 0.13];
const PLANE: [f64; 3] = [0.45, 0.42, 0.40];

/// Two axis-aligned boxes in the target frame whose union is the L prism.
/// The cross-section has no rotational symmetry, so pose is observable.
/// Sized so the target spans a usable pixel footprint through the very
/// wide lens at typical hover distances.
const LEGS: [([f64; 3], [f64; 3]); 2] = [
    ([-0.06, -0.06, -0.03], [0.06, 0.0, 0.03]),
    ([-0.06, 0.0, -0.03], [0.0, 0.06, 0.03]),
];

/// Base color per (leg, axis, sign) face.
const FACE_COLORS: [[[f64; 3]; 6]; 2] = [
    [
        [0.90, 0.20, 0.20],
        [0.20, 0.90, 0.20],
        [0.20, 0.20, 0.90],
        [0.90, 0.80, 0.20],
        [0.90, 0.30, 0.80],
        [0.30, 0.90, 0.90],
    ],
    [
        [0.90, 0.50, 0.10],
        [0.50, 0.10, 0.90],
        [0.10, 0.60, 0.40],
        [0.70, 0.70, 0.70],
        [0.95, 0.90, 0.85],
        [0.40, 0.25, 0.10],
    ],
];

struct Hit {
    t: f64,
    color: [f64; 3],
    normal: [f64; 3],
}

/// Slab intersection with one box in the target's local frame. Returns the
/// entry distance, the face axis, and the face sign.
fn ray_box(o: [f64; 3], d: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> Option<(f64, usize, f64)> {
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    let mut axis = 0;
    let mut sign = 0.0;
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a] < lo[a] || o[a] > hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[a];
        let (mut t0, mut t1) = ((lo[a] - o[a]) * inv, (hi[a] - o[a]) * inv);
        let mut s = -1.0;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
            s = 1.0;
        }
        if t0 > t_enter {
            t_enter = t0;
            axis = a;
            sign = s;
        }
        t_exit = t_exit.min(t1);
        if t_enter > t_exit {
            return None;
        }
    }
    if t_enter <= 1e-9 || !t_enter.is_finite() {
        return None;
    }
    Some((t_enter, axis, sign))
}

fn cast(state: &SceneState, origin: [f64; 3], dir: [f64; 3]) -> [f64; 3] {
    let mut best: Option<Hit> = None;

    let n = state.up();
    let dn = dot3(dir, n);
    if dn.abs() > 1e-15 {
        let t = -dot3(origin, n) / dn;
        if t > 1e-9 {
            best = Some(Hit { t, color: PLANE, normal: n });
        }
    }

    let inv_rot = state.target_rot.inverse();
    let rel = [
        origin[0] - state.target_pos[0],
        origin[1] - state.target_pos[1],
        origin[2] - state.target_pos[2],
    ];
    let o_l = inv_rot.apply(rel);
    let d_l = inv_rot.apply(dir);
    for (leg, &(lo, hi)) in LEGS.iter().enumerate() {
        if let Some((t, axis, sign)) = ray_box(o_l, d_l, lo, hi) {
            if best.as_ref().is_none_or(|b| t < b.t) {
                let mut n_l = [0.0; 3];
                n_l[axis] = sign;
                let face = 2 * axis + if sign > 0.0 { 0 } else { 1 };
                best = Some(Hit {
                    t,
                    color: FACE_COLORS[leg][face],
                    normal: state.target_rot.apply(n_l),
                });
            }
        }
    }

    match best {
        None => SKY,
        Some(h) => {
            let lambert = dot3(h.normal, dir).abs();
            let shade = 0.35 + 0.65 * lambert;
            [
                (h.color[0] * shade).clamp(0.0, 1.0),
                (h.color[1] * shade).clamp(0.0, 1.0),
                (h.color[2] * shade).clamp(0.0, 1.0),
            ]
        }
    }
}

/// Renders the wrist view as [3, hw, hw] with values in [0, 1]. Pure
/// arithmetic on the state: the same state renders bit-identically.
///
/// Each pixel averages a 2x2 sub-ray pattern. The offsets are symmetric
/// under u -> 1 - u, so quarter rolls still permute pixels exactly.
pub fn render(state: &SceneState, hw: usize) -> Array3<f64> {
    let tan_half = (FOV_DEG.to_radians() / 2.0).tan();
    let offsets = [0.25, 0.75];
    let mut img = Array3::zeros((3, hw, hw));
    for py in 0..hw {
        for px in 0..hw {
            let mut acc = [0.0f64; 3];
            for oy in offsets {
                for ox in offsets {
                    let ndc_x = ((px as f64 + ox) / hw as f64) * 2.0 - 1.0;
                    let ndc_y = ((py as f64 + oy) / hw as f64) * 2.0 - 1.0;
                    let d_cam = [ndc_x * tan_half, ndc_y * tan_half, 1.0];
                    let norm = (d_cam[0] * d_cam[0] + d_cam[1] * d_cam[1] + 1.0).sqrt();
                    let d_cam = [d_cam[0] / norm, d_cam[1] / norm, d_cam[2] / norm];
                    let dir = state.gripper_rot.apply(d_cam);
                    let c = cast(state, state.gripper_pos, dir);
                    for ch in 0..3 {
                        acc[ch] += c[ch];
                    }
                }
            }
            for ch in 0..3 {
                img[[ch, py, px]] = acc[ch] / 4.0;
            }
        }
    }
    img
}
