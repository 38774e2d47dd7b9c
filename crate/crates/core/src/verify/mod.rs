//! Runtime verification battery.
//!
//! Each check measures the worst violation of one structural property and
//! reports it next to its tolerance, so a report is useful both as a gate
//! (all pass) and as a diagnostic (how much headroom each property has).
//! The Wigner fault hook exists to prove the battery can actually catch a
//! broken representation, not just bless a working one.

use crate::diffusion::{
    rotate_steps_linear, ActInputs, NoiseSchedule, ObsInputs, PolicyError, PolicySpec, Variant,
    STEP_DIM,
};
use crate::env::{render, rotate_scene, SceneState};
use crate::nn::{timestep_embedding, Graph, ParamStore, TIME_EMB_DIM};
use crate::so3::Rotation;
use crate::spectral::coeffs::{sh_analysis_matrix, sh_synthesis_matrix};
use crate::spectral::{sh_dim, wigner_blocks, SphericalCoeffs};
use crate::sphere::{project_to_sphere, ProjectionWeights, SphereGrid};
use crate::util::substream;
use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const TOL_WIGNER: f64 = 1e-9;
pub const TOL_ROUND_TRIP: f64 = 1e-10;
pub const TOL_SPECTRAL: f64 = 1e-10;
pub const TOL_RENDERED: f64 = 1e-6;
pub const TOL_QUARTER_ROLL: f64 = 1e-6;
pub const TOL_MEASURED_ROLL: f64 = 5e-2;
pub const TOL_DENOISER: f64 = 1e-5;
pub const TOL_SAMPLER: f64 = 1e-4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropertyReport {
    pub property: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl PropertyReport {
    pub fn new(property: &str, max_error: f64, tolerance: f64) -> Self {
        Self {
            property: property.to_string(),
            max_error,
            tolerance,
            pass: max_error.is_finite() && max_error < tolerance,
        }
    }
}

/// Additive corruption of one Wigner matrix entry, injected into the
/// homomorphism check to demonstrate that it fails loudly.
#[derive(Debug, Clone, Copy)]
pub struct WignerFault {
    pub l: usize,
    pub row: usize,
    pub col: usize,
    pub delta: f64,
}

fn max_abs(iter: impl Iterator<Item = f64>) -> f64 {
    iter.fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Worst entry of D(gh) - D(g) D(h) over random pairs, per degree block.
pub fn wigner_homomorphism_error(
    l_max: usize,
    pairs: usize,
    seed: u64,
    fault: Option<&WignerFault>,
) -> f64 {
    let mut rng = substream(seed, "verify-hom", 0);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let g = Rotation::random(&mut rng);
        let h = Rotation::random(&mut rng);
        let bg = wigner_blocks(&g, l_max);
        let bh = wigner_blocks(&h, l_max);
        let bgh = wigner_blocks(&g.compose(&h), l_max);
        for l in 0..=l_max {
            let mut dg = bg.blocks[l].clone();
            if let Some(f) = fault {
                if f.l == l {
                    dg[[f.row, f.col]] += f.delta;
                }
            }
            let prod = dg.dot(&bh.blocks[l]);
            worst = worst.max(max_abs(
                prod.iter().zip(bgh.blocks[l].iter()).map(|(a, b)| a - b),
            ));
        }
    }
    worst
}

/// Worst entry of D(g) D(g)^T - I over random rotations.
pub fn wigner_orthogonality_error(l_max: usize, n: usize, seed: u64) -> f64 {
    let mut rng = substream(seed, "verify-orth", 0);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let g = Rotation::random(&mut rng);
        let bg = wigner_blocks(&g, l_max);
        for l in 0..=l_max {
            let prod = bg.blocks[l].dot(&bg.blocks[l].t());
            let eye: Array2<f64> = Array2::eye(2 * l + 1);
            worst = worst.max(max_abs(
                prod.iter().zip(eye.iter()).map(|(a, b): (&f64, &f64)| a - b),
            ));
        }
    }
    worst
}

/// Synthesis then analysis of random band-limited coefficients on the full
/// sphere grid.
pub fn spherical_round_trip_error(l_max: usize, channels: usize, seed: u64) -> f64 {
    let mut rng = substream(seed, "verify-rt", 0);
    let grid = SphereGrid::healpix_like(4).expect("supported resolution");
    let pts = grid.unit_vectors();
    let syn = sh_synthesis_matrix(&pts, l_max);
    let (ana, _cond) = sh_analysis_matrix(&pts, l_max).expect("well conditioned grid");
    let c = Array2::from_shape_fn((channels, sh_dim(l_max)), |_| rng.gen_range(-1.0..1.0));
    let samples = c.dot(&syn.t());
    let back = samples.dot(&ana.t());
    max_abs(c.iter().zip(back.iter()).map(|(a, b)| a - b))
}

/// Two-path check of the world-frame correction: rotating scene and camera
/// together by g must rotate the corrected coefficients by exactly D(g).
pub fn scene_rotation_spectral_error(trials: usize, seed: u64) -> f64 {
    let mut rng = substream(seed, "verify-scene-spec", 0);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let c = SphericalCoeffs {
            l_max: 3,
            data: Array2::from_shape_fn((2, sh_dim(3)), |_| rng.gen_range(-1.0..1.0)),
        };
        let r_x = Rotation::random(&mut rng);
        let g = Rotation::random(&mut rng);
        let moved = c.rotate(&g.compose(&r_x));
        let expected = c.rotate(&r_x).rotate(&g);
        worst = worst.max(max_abs(
            moved.data.iter().zip(expected.data.iter()).map(|(a, b)| a - b),
        ));
    }
    worst
}

/// Spectral form of the roll property: a pure roll about the optical axis
/// changes the camera-frame signal and the correction in exactly opposite
/// ways, so the corrected coefficients must not move at all.
pub fn camera_roll_spectral_error(trials: usize, seed: u64) -> f64 {
    let mut rng = substream(seed, "verify-roll-spec", 0);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let c = SphericalCoeffs {
            l_max: 3,
            data: Array2::from_shape_fn((2, sh_dim(3)), |_| rng.gen_range(-1.0..1.0)),
        };
        let r_x = Rotation::random(&mut rng);
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let rolled = c.rotate(&Rotation::rz(-theta));
        let corrected = c.rotate(&r_x);
        let corrected_rolled = rolled.rotate(&r_x.compose(&Rotation::rz(theta)));
        worst = worst.max(max_abs(
            corrected
                .data
                .iter()
                .zip(corrected_rolled.data.iter())
                .map(|(a, b)| a - b),
        ));
    }
    worst
}

fn verification_state() -> SceneState {
    SceneState {
        target_pos: [0.06, -0.04, 0.05],
        target_rot: Rotation::rz(0.9),
        gripper_pos: [0.0, 0.0, 0.3],
        gripper_rot: Rotation::ry(std::f64::consts::PI),
        gripper_open: 1.0,
        grasped: false,
        scene_rot: Rotation::IDENTITY,
        grasp_rel: None,
    }
}

fn verification_spec() -> PolicySpec {
    let mut spec = PolicySpec::defaults(Variant::IspSo3);
    spec.image_hw = 16;
    spec.history = 1;
    spec.horizon = 4;
    spec.enc_n1 = 1;
    spec.enc_n2 = 1;
    spec.enc_n3 = 1;
    spec.enc_out = 2;
    spec.c_lat = 2;
    spec.c_pro = 2;
    spec.d_a = 2;
    spec.unet_widths = [4, 4, 4];
    spec
}

/// Corrected spherical coefficients of one rendered state, through a real
/// encoder forward pass and the geometric projection.
fn corrected_coeffs(
    spec: &PolicySpec,
    store: &ParamStore,
    grid: &SphereGrid,
    ana_t: &Array2<f64>,
    proj: &ProjectionWeights,
    state: &SceneState,
) -> SphericalCoeffs {
    let img = render(state, spec.image_hw);
    let mut g = Graph::new();
    let mut batch = ndarray::Array4::zeros((1, 3, spec.image_hw, spec.image_hw));
    batch.index_axis_mut(Axis(0), 0).assign(&img);
    let x = g.input(batch.into_dyn());
    let feats = spec.encoder_spec().forward(&mut g, "enc", store, x);
    let v = g.value(feats);
    let (c, h, w) = (v.shape()[1], v.shape()[2], v.shape()[3]);
    let mut fmap = Array3::zeros((c, h, w));
    for ch in 0..c {
        for iy in 0..h {
            for ix in 0..w {
                fmap[[ch, iy, ix]] = v[[0, ch, iy, ix]];
            }
        }
    }
    let samples = project_to_sphere(&fmap, proj, grid).expect("projection shapes");
    let coeffs = SphericalCoeffs { l_max: spec.l_sph, data: samples.dot(ana_t) };
    coeffs.rotate(&state.gripper_rot)
}

/// End-to-end scene-rotation equivariance on rendered images: for every
/// element of the icosahedral set, rotating the whole scene must rotate
/// the corrected coefficients by exactly that element. Relative error.
pub fn scene_rotation_rendered_error(seed: u64) -> Result<f64, PolicyError> {
    let spec = verification_spec();
    let assets = spec.build_assets()?;
    let mut store = ParamStore::new();
    let mut rng = substream(seed, "verify-scene-rend", 0);
    spec.init_params(&assets, &mut store, &mut rng);

    let sphere = assets.sphere.as_ref().expect("sphere assets");
    let out_hw = spec.encoder_spec().out_hw(spec.image_hw);
    let proj = ProjectionWeights::geometric(&sphere.grid, out_hw, out_hw);
    let lattice = assets.lattice.as_ref().expect("lattice");

    let state = verification_state();
    let base = corrected_coeffs(&spec, &store, &sphere.grid, &sphere.ana_sph_t, &proj, &state);
    let scale = max_abs(base.data.iter().copied()).max(1e-12);
    let mut worst = 0.0f64;
    for g in &lattice.sampling.group.elements {
        let rotated_state = rotate_scene(&state, g).expect("stays in the workspace");
        let moved = corrected_coeffs(
            &spec,
            &store,
            &sphere.grid,
            &sphere.ana_sph_t,
            &proj,
            &rotated_state,
        );
        let expected = base.rotate(g);
        let err = max_abs(
            moved.data.iter().zip(expected.data.iter()).map(|(a, b)| a - b),
        );
        worst = worst.max(err / scale);
    }
    Ok(worst)
}

/// Worst pixel discrepancy between a quarter-rolled render and the base
/// render re-indexed by the quarter-turn pixel map.
pub fn camera_roll_quarter_pixel_error() -> f64 {
    let state = verification_state();
    let hw = 64;
    let base = render(&state, hw);
    let mut rolled_state = state;
    rolled_state.gripper_rot = state
        .gripper_rot
        .compose(&Rotation::rz(std::f64::consts::FRAC_PI_2));
    let rolled = render(&rolled_state, hw);
    let mut worst = 0.0f64;
    for ch in 0..3 {
        for py in 0..hw {
            for px in 0..hw {
                let want = base[[ch, px, hw - 1 - py]];
                worst = worst.max((rolled[[ch, py, px]] - want).abs());
            }
        }
    }
    worst
}

/// Measured pixel-level roll error at an arbitrary angle: the rolled
/// render is compared against the base render resampled along the roll by
/// bilinear interpolation about the principal point. The residual is the
/// interpolation error of the comparison itself, reported as a relative
/// l2 norm over the pixels whose source stays inside the frame.
pub fn camera_roll_measured_error(angle: f64) -> f64 {
    let state = verification_state();
    let hw = 64;
    let base = render(&state, hw);
    let mut rolled_state = state;
    rolled_state.gripper_rot = state.gripper_rot.compose(&Rotation::rz(angle));
    let rolled = render(&rolled_state, hw);

    let center = (hw as f64 - 1.0) / 2.0;
    let (sin_a, cos_a) = angle.sin_cos();
    let mut diff2 = 0.0f64;
    let mut norm2 = 0.0f64;
    for py in 0..hw {
        for px in 0..hw {
            let x = px as f64 - center;
            let y = py as f64 - center;
            let sx = x * cos_a - y * sin_a + center;
            let sy = x * sin_a + y * cos_a + center;
            if sx < 0.0 || sy < 0.0 || sx > (hw - 1) as f64 || sy > (hw - 1) as f64 {
                continue;
            }
            let (ix, iy) = (sx.floor() as usize, sy.floor() as usize);
            let (fx, fy) = (sx - ix as f64, sy - iy as f64);
            let (ix1, iy1) = ((ix + 1).min(hw - 1), (iy + 1).min(hw - 1));
            for ch in 0..3 {
                let interp = base[[ch, iy, ix]] * (1.0 - fx) * (1.0 - fy)
                    + base[[ch, iy, ix1]] * fx * (1.0 - fy)
                    + base[[ch, iy1, ix]] * (1.0 - fx) * fy
                    + base[[ch, iy1, ix1]] * fx * fy;
                let d = rolled[[ch, py, px]] - interp;
                diff2 += d * d;
                norm2 += interp * interp;
            }
        }
    }
    (diff2 / norm2.max(1e-30)).sqrt()
}

fn random_obs(spec: &PolicySpec, seed: u64) -> ObsInputs {
    let mut rng = substream(seed, "verify-obs", 0);
    ObsInputs {
        image: ndarray::Array4::from_shape_fn((1, 3, spec.image_hw, spec.image_hw), |_| {
            rng.gen_range(0.0..1.0)
        }),
        prop_pos: Array3::from_shape_fn((1, spec.history, 3), |_| rng.gen_range(-1.0..1.0)),
        prop_col1: Array3::from_shape_fn((1, spec.history, 3), |_| rng.gen_range(-1.0..1.0)),
        prop_col2: Array3::from_shape_fn((1, spec.history, 3), |_| rng.gen_range(-1.0..1.0)),
        prop_grip: Array3::from_shape_fn((1, spec.history, 1), |_| rng.gen_range(0.0..1.0)),
        r_x: vec![Rotation::random(&mut rng)],
    }
}

/// Single-pass denoiser equivariance at random initialization, over every
/// element of the policy's symmetry set. Relative error.
pub fn denoiser_equivariance_error(seed: u64) -> Result<f64, PolicyError> {
    let spec = verification_spec();
    let assets = spec.build_assets()?;
    let mut store = ParamStore::new();
    let mut rng = substream(seed, "verify-denoiser", 0);
    spec.init_params(&assets, &mut store, &mut rng);
    randomize_output_head(&mut store, seed);

    let obs = random_obs(&spec, seed);
    let steps = Array2::from_shape_fn((spec.horizon, STEP_DIM), |_| rng.gen_range(-1.0..1.0));
    let act = ActInputs::from_steps(&[steps.clone()]);
    let emb = timestep_embedding(7);
    let mut t_emb = Array2::zeros((1, TIME_EMB_DIM));
    t_emb.row_mut(0).assign(&emb);

    let eval = |obs: &ObsInputs, act: &ActInputs| -> Array2<f64> {
        let mut g = Graph::new();
        let out = spec.eps_hat(&mut g, &store, &assets, obs, act, &t_emb);
        let v = g.value(out);
        Array2::from_shape_fn((spec.horizon, STEP_DIM), |(t, d)| v[[0, t, d]])
    };

    let base = eval(&obs, &act);
    let scale = max_abs(base.iter().copied()).max(1e-12);
    let elements = assets.lattice.as_ref().expect("lattice").sampling.group.elements.clone();
    let mut worst = 0.0f64;
    for g in &elements {
        let obs_g = obs.rotated(g);
        let act_g = ActInputs::from_steps(&[rotate_steps_linear(&steps, g)]);
        let moved = eval(&obs_g, &act_g);
        let expected = rotate_steps_linear(&base, g);
        let err = max_abs(moved.iter().zip(expected.iter()).map(|(a, b)| a - b));
        worst = worst.max(err / scale);
    }
    Ok(worst)
}

/// Equivariance of the full iterative sampler: rotating observation and
/// initial noise rotates the sampled chunk. Relative error over a few
/// group elements.
pub fn sampler_equivariance_error(seed: u64, ddim_steps: usize) -> Result<f64, PolicyError> {
    let spec = verification_spec();
    let assets = spec.build_assets()?;
    let mut store = ParamStore::new();
    let mut rng = substream(seed, "verify-sampler", 0);
    spec.init_params(&assets, &mut store, &mut rng);
    randomize_output_head(&mut store, seed);

    let obs = random_obs(&spec, seed);
    let schedule = NoiseSchedule::ddpm_linear(50, 1e-4, 2e-2).expect("valid ramp");
    let init = Array2::from_shape_fn((spec.horizon, STEP_DIM), |_| rng.gen_range(-1.0..1.0));

    let base = crate::diffusion::sample_chunk(
        &spec, &store, &assets, &obs, &schedule, ddim_steps, init.clone(),
    );
    let scale = max_abs(base.iter().copied()).max(1e-12);
    let elements = assets.lattice.as_ref().expect("lattice").sampling.group.elements.clone();
    let mut worst = 0.0f64;
    for g in elements.iter().skip(1).step_by(17) {
        let obs_g = obs.rotated(g);
        let moved = crate::diffusion::sample_chunk(
            &spec,
            &store,
            &assets,
            &obs_g,
            &schedule,
            ddim_steps,
            rotate_steps_linear(&init, g),
        );
        let expected = rotate_steps_linear(&base, g);
        let err = max_abs(moved.iter().zip(expected.iter()).map(|(a, b)| a - b));
        worst = worst.max(err / scale);
    }
    Ok(worst)
}

/// The default U-Net head starts at zero so the denoiser starts unbiased;
/// equivariance checks randomize it to make the output generic.
fn randomize_output_head(store: &mut ParamStore, seed: u64) {
    let mut rng = substream(seed, "verify-head", 1);
    let w = store.get_mut("unet.head.w");
    for v in w.iter_mut() {
        *v = rng.gen_range(-0.3..0.3);
    }
}

/// Runs every check at its acceptance tolerance.
pub fn standard_battery(seed: u64) -> Result<Vec<PropertyReport>, PolicyError> {
    battery_inner(seed, None)
}

/// Same battery with a corrupted Wigner entry injected into the
/// homomorphism check; the corresponding report must fail.
pub fn battery_with_wigner_fault(
    seed: u64,
    fault: &WignerFault,
) -> Result<Vec<PropertyReport>, PolicyError> {
    battery_inner(seed, Some(fault))
}

fn battery_inner(
    seed: u64,
    fault: Option<&WignerFault>,
) -> Result<Vec<PropertyReport>, PolicyError> {
    let mut reports = vec![
        PropertyReport::new(
            "wigner-homomorphism",
            wigner_homomorphism_error(4, 100, seed, fault),
            TOL_WIGNER,
        ),
        PropertyReport::new(
            "wigner-orthogonality",
            wigner_orthogonality_error(4, 100, seed),
            TOL_WIGNER,
        ),
        PropertyReport::new(
            "spherical-round-trip",
            spherical_round_trip_error(6, 2, seed),
            TOL_ROUND_TRIP,
        ),
        PropertyReport::new(
            "scene-rotation-spectral",
            scene_rotation_spectral_error(100, seed),
            TOL_SPECTRAL,
        ),
        PropertyReport::new(
            "camera-roll-spectral",
            camera_roll_spectral_error(100, seed),
            TOL_SPECTRAL,
        ),
        PropertyReport::new(
            "camera-roll-quarter-pixel",
            camera_roll_quarter_pixel_error(),
            TOL_QUARTER_ROLL,
        ),
        PropertyReport::new(
            "camera-roll-measured-45deg",
            camera_roll_measured_error(std::f64::consts::FRAC_PI_4),
            TOL_MEASURED_ROLL,
        ),
    ];
    reports.push(PropertyReport::new(
        "scene-rotation-rendered",
        scene_rotation_rendered_error(seed)?,
        TOL_RENDERED,
    ));
    reports.push(PropertyReport::new(
        "denoiser-equivariance",
        denoiser_equivariance_error(seed)?,
        TOL_DENOISER,
    ));
    reports.push(PropertyReport::new(
        "sampler-equivariance",
        sampler_equivariance_error(seed, 16)?,
        TOL_SAMPLER,
    ));
    Ok(reports)
}
