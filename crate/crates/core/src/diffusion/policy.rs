//! The denoiser: one wrist image, a proprioception history, and a noisy
//! action chunk go in, a noise estimate comes out.
//!
//! The symmetric configurations share one backbone. A steerable image
//! encoder feeds a learned projection onto a sphere grid; spherical
//! analysis and a world-frame correction by the camera orientation turn
//! the projected samples into coefficients that move one-to-one with
//! scene rotations; spectral lifts raise them to rotation-group
//! coefficients; evaluating those at a fixed rotation lattice yields
//! per-row conditioning whose rows permute under the lattice group, so a
//! per-row denoising network commutes with the group by construction.
//! Ablation switches swap each stage for a plain counterpart.

use ndarray::{Array1, Array2, Array3, Array4, ArrayD, Axis, IxDyn};
use rand::Rng;
use thiserror::Error;

use crate::diffusion::{NoiseSchedule, STEP_DIM};
use crate::nn::{
    embed_actions, embed_irreps, init_kaiming, rotate_rows_per_item, sample_rows, sampled_silu,
    timestep_embedding, EncoderSpec, Graph, GroupLattice, NodeId, ParamStore, ProprioMix,
    RowDecoder, S2ToSo3, So3ToSo3, UNetSpec, TIME_EMB_DIM,
};
use crate::so3::{finite::standard_offsets, FiniteGroup, GroupError, Rotation, SamplingSet};
use crate::spectral::coeffs::sh_synthesis_matrix;
use crate::spectral::{pinv_guarded, sh_dim, wigner_blocks, SpectralError};
use crate::sphere::{ProjectionWeights, SphereError, SphereGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    IspSo3,
    IspSo2,
    BaselinePlain,
}

/// Each switch replaces one symmetric stage with a plain one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablations {
    pub sphere_off: bool,
    pub equi_enc_off: bool,
    pub equi_u_off: bool,
}

/// Resolved stage choices after the variant overrides the switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Effective {
    pub use_sphere: bool,
    pub equi_encoder: bool,
    pub grouped_unet: bool,
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Sphere(#[from] SphereError),
    #[error("bad policy config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpec {
    pub variant: Variant,
    pub ablations: Ablations,
    pub image_hw: usize,
    pub history: usize,
    pub horizon: usize,
    pub l_sph: usize,
    pub l_latent: usize,
    pub nside: usize,
    pub enc_n1: usize,
    pub enc_n2: usize,
    pub enc_n3: usize,
    pub enc_out: usize,
    pub c_lat: usize,
    pub c_pro: usize,
    pub d_a: usize,
    pub unet_widths: [usize; 3],
}

impl PolicySpec {
    pub fn defaults(variant: Variant) -> Self {
        Self {
            variant,
            ablations: Ablations::default(),
            image_hw: 64,
            history: if variant == Variant::IspSo3 { 2 } else { 1 },
            horizon: 16,
            l_sph: 3,
            l_latent: 2,
            // The visible hemisphere must hold enough latitude rings for
            // the analysis bandwidth; at nside=2 only three rings sit
            // strictly above the equator, one short of what degree three
            // needs, so the finer grid is the coarsest workable default.
            nside: 4,
            enc_n1: 4,
            enc_n2: 8,
            enc_n3: 8,
            enc_out: 8,
            c_lat: 8,
            c_pro: 4,
            d_a: 8,
            unet_widths: [16, 24, 32],
        }
    }

    pub fn effective(&self) -> Effective {
        match self.variant {
            Variant::BaselinePlain => Effective {
                use_sphere: false,
                equi_encoder: false,
                grouped_unet: false,
            },
            _ => Effective {
                use_sphere: !self.ablations.sphere_off,
                equi_encoder: !self.ablations.equi_enc_off,
                grouped_unet: !self.ablations.equi_u_off,
            },
        }
    }

    pub fn encoder_spec(&self) -> EncoderSpec {
        EncoderSpec {
            in_ch: 3,
            n1: self.enc_n1,
            n2: self.enc_n2,
            n3: self.enc_n3,
            n_out: self.enc_out,
            equivariant: self.effective().equi_encoder,
        }
    }

    /// Rotation lattice for the variant; the plain baseline has none.
    pub fn sampling_set(&self) -> Result<Option<SamplingSet>, PolicyError> {
        match self.variant {
            Variant::IspSo3 => {
                let set = SamplingSet::build(FiniteGroup::icosahedral()?, vec![Rotation::IDENTITY])?;
                Ok(Some(set))
            }
            Variant::IspSo2 => {
                let set = SamplingSet::build(FiniteGroup::cyclic(8)?, standard_offsets(9))?;
                Ok(Some(set))
            }
            Variant::BaselinePlain => Ok(None),
        }
    }

    fn obs_feat_dim(&self) -> usize {
        if self.effective().use_sphere {
            self.c_lat + self.c_pro
        } else {
            self.enc_out + self.history * STEP_DIM
        }
    }

    fn cond_dim(&self, rows: usize) -> usize {
        let eff = self.effective();
        let obs = self.obs_feat_dim();
        if eff.grouped_unet {
            obs + TIME_EMB_DIM
        } else if eff.use_sphere {
            rows * obs + TIME_EMB_DIM
        } else {
            obs + TIME_EMB_DIM
        }
    }

    fn unet_spec(&self, rows: usize) -> UNetSpec {
        UNetSpec {
            d_in: self.d_a,
            widths: self.unet_widths,
            cond_dim: self.cond_dim(rows),
        }
    }

    pub fn build_assets(&self) -> Result<PolicyAssets, PolicyError> {
        if self.horizon % 4 != 0 || self.horizon == 0 {
            return Err(PolicyError::BadConfig(format!(
                "horizon {} must be a positive multiple of 4",
                self.horizon
            )));
        }
        if self.l_latent > self.l_sph {
            return Err(PolicyError::BadConfig(format!(
                "latent bandwidth {} exceeds analysis bandwidth {}",
                self.l_latent, self.l_sph
            )));
        }
        let eff = self.effective();
        let lattice = match self.sampling_set()? {
            Some(set) => Some(GroupLattice::build(set, self.l_latent)?),
            None => None,
        };
        let sphere = if eff.use_sphere {
            let grid = SphereGrid::healpix_like(self.nside)?;
            let dirs = grid.unit_vectors();
            let front: Vec<usize> = (0..grid.len())
                .filter(|&p| grid.hemisphere_mask[p])
                .collect();
            if front.len() < sh_dim(self.l_sph) {
                return Err(PolicyError::BadConfig(format!(
                    "{} front grid points cannot support {} coefficients",
                    front.len(),
                    sh_dim(self.l_sph)
                )));
            }
            let front_dirs: Vec<[f64; 3]> = front.iter().map(|&p| dirs[p]).collect();
            let syn_front = sh_synthesis_matrix(&front_dirs, self.l_sph);
            let (ana_front, cond) = pinv_guarded(&syn_front)?;
            // Back points never carry signal; their analysis columns are
            // zero so the fit only ever reads the visible hemisphere.
            let mut ana_t = Array2::zeros((grid.len(), sh_dim(self.l_sph)));
            for (k, &p) in front.iter().enumerate() {
                for j in 0..sh_dim(self.l_sph) {
                    ana_t[[p, j]] = ana_front[[j, k]];
                }
            }
            let mask = Array2::from_shape_fn((1, grid.len()), |(_, p)| {
                if grid.hemisphere_mask[p] {
                    1.0
                } else {
                    0.0
                }
            });
            Some(SphereAssets { grid, ana_sph_t: ana_t, mask, cond_front: cond })
        } else {
            None
        };
        Ok(PolicyAssets { lattice, sphere })
    }

    pub fn rows(&self, assets: &PolicyAssets) -> usize {
        assets.lattice.as_ref().map_or(1, |l| l.rows())
    }

    pub fn init_params<R: Rng>(
        &self,
        assets: &PolicyAssets,
        store: &mut ParamStore,
        rng: &mut R,
    ) {
        let eff = self.effective();
        self.encoder_spec().init_params("enc", store, rng);
        if let Some(sp) = &assets.sphere {
            let hw = self.encoder_spec().out_hw(self.image_hw);
            let prior = ProjectionWeights::geometric(&sp.grid, hw, hw);
            store.insert("proj.w", prior.w.into_dyn());
            S2ToSo3 { l_max: self.l_latent, c_in: self.enc_out, c_out: self.c_lat }
                .init_params("lift", store, rng);
            So3ToSo3 { l_max: self.l_latent, c_in: self.c_lat, c_out: self.c_lat }
                .init_params("mix1", store, rng);
            So3ToSo3 { l_max: self.l_latent, c_in: self.c_lat, c_out: self.c_lat }
                .init_params("mix2", store, rng);
            ProprioMix { history: self.history, c_out: self.c_pro }
                .init_params("prop", store, rng);
        }
        store.insert("tok.w", init_kaiming(&[STEP_DIM, self.d_a], STEP_DIM, rng));
        store.insert("tok.b", ArrayD::zeros(IxDyn(&[1, self.d_a])));
        let rows = self.rows(assets);
        self.unet_spec(rows).init_params("unet", store, rng);
        if eff.grouped_unet {
            RowDecoder { d_a: self.d_a }.init_params("dec", store, rng);
        } else {
            store.insert("dec.w", init_kaiming(&[self.d_a, STEP_DIM], self.d_a, rng));
            store.insert("dec.b", ArrayD::zeros(IxDyn(&[1, STEP_DIM])));
        }
    }

    /// Builds the noise-estimate graph; returns the [b, horizon, 10] output.
    pub fn eps_hat(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        assets: &PolicyAssets,
        obs: &ObsInputs,
        act: &ActInputs,
        t_emb: &Array2<f64>,
    ) -> NodeId {
        let eff = self.effective();
        let b = obs.image.shape()[0];
        let t = act.pos.shape()[1];
        assert_eq!(t, self.horizon, "chunk length must match the horizon");
        assert_eq!(t_emb.nrows(), b, "one time embedding per item");
        let rows = self.rows(assets);

        let image = g.input(obs.image.clone().into_dyn());
        let feat = self.encoder_spec().forward(g, "enc", store, image);
        let fs = g.shape(feat).to_vec();
        let (c_enc, hw) = (fs[1], fs[2] * fs[3]);

        let obs_grouped: Option<NodeId>;
        let obs_flat: NodeId;
        if eff.use_sphere {
            let sp = assets.sphere.as_ref().expect("sphere assets");
            let flat = g.reshape(feat, &[b * c_enc, hw]);
            let proj = g.param("proj.w", store.get("proj.w").clone());
            let proj_t = g.permute(proj, &[1, 0]);
            let samples = g.matmul(flat, proj_t);
            let mask = g.input(sp.mask.clone().into_dyn());
            let masked = g.mul(samples, mask);
            let ana = g.input(sp.ana_sph_t.clone().into_dyn());
            let coeffs = g.matmul(masked, ana);
            let coeffs = g.reshape(coeffs, &[b, c_enc, sh_dim(self.l_sph)]);
            let coeffs = g.slice_axis(coeffs, 2, 0, sh_dim(self.l_latent));
            let mats: Vec<NodeId> = obs
                .r_x
                .iter()
                .map(|r| {
                    let d = wigner_blocks(r, self.l_latent).block_diag_sph();
                    g.input(d.t().to_owned().into_dyn())
                })
                .collect();
            let corrected = rotate_rows_per_item(g, coeffs, &mats);

            let lattice = assets.lattice.as_ref().expect("lattice");
            let syn_lat = g.input(lattice.syn_latent_t.clone().into_dyn());
            let ana_lat = g.input(lattice.ana_latent_t.clone().into_dyn());
            let lift = S2ToSo3 { l_max: self.l_latent, c_in: c_enc, c_out: self.c_lat }
                .forward(g, "lift", store, corrected);
            let x = sampled_silu(g, lift, syn_lat, ana_lat);
            let x = So3ToSo3 { l_max: self.l_latent, c_in: self.c_lat, c_out: self.c_lat }
                .forward(g, "mix1", store, x);
            let x = sampled_silu(g, x, syn_lat, ana_lat);
            let x = So3ToSo3 { l_max: self.l_latent, c_in: self.c_lat, c_out: self.c_lat }
                .forward(g, "mix2", store, x);

            let pos = g.input(obs.prop_pos.clone().into_dyn());
            let col1 = g.input(obs.prop_col1.clone().into_dyn());
            let col2 = g.input(obs.prop_col2.clone().into_dyn());
            let grip = g.input(obs.prop_grip.clone().into_dyn());
            let (rho1, rho0) = ProprioMix { history: self.history, c_out: self.c_pro }
                .forward(g, "prop", store, pos, col1, col2, grip);
            let pemb = embed_irreps(g, rho0, rho1, self.l_latent);
            let both = g.concat(&[x, pemb], 1);
            let e_o = sample_rows(g, both, syn_lat);
            if eff.grouped_unet {
                obs_grouped = Some(e_o);
                obs_flat = e_o;
            } else {
                obs_grouped = None;
                obs_flat = g.reshape(e_o, &[b, rows * self.obs_feat_dim()]);
            }
        } else {
            let pooled = g.mean_axis(feat, 3);
            let pooled = g.mean_axis(pooled, 2);
            let pos = g.input(obs.prop_pos.clone().into_dyn());
            let col1 = g.input(obs.prop_col1.clone().into_dyn());
            let col2 = g.input(obs.prop_col2.clone().into_dyn());
            let grip = g.input(obs.prop_grip.clone().into_dyn());
            let praw = g.concat(&[pos, col1, col2, grip], 2);
            let praw = g.reshape(praw, &[b, self.history * STEP_DIM]);
            let flat = g.concat(&[pooled, praw], 1);
            if eff.grouped_unet {
                let f = self.obs_feat_dim();
                let one = g.reshape(flat, &[b, 1, f]);
                let zeros = g.input(ArrayD::zeros(IxDyn(&[b, rows, f])));
                obs_grouped = Some(g.add(zeros, one));
                obs_flat = flat;
            } else {
                obs_grouped = None;
                obs_flat = flat;
            }
        }

        let temb = g.input(t_emb.clone().into_dyn());
        let apos = g.input(act.pos.clone().into_dyn());
        let acol1 = g.input(act.col1.clone().into_dyn());
        let acol2 = g.input(act.col2.clone().into_dyn());
        let agrip = g.input(act.grip.clone().into_dyn());
        let tok_w = g.param("tok.w", store.get("tok.w").clone());
        let tok_b = g.param("tok.b", store.get("tok.b").clone());

        if eff.grouped_unet {
            let rows_obs = obs_grouped.expect("grouped observation rows");
            let temb1 = g.reshape(temb, &[b, 1, TIME_EMB_DIM]);
            let tzeros = g.input(ArrayD::zeros(IxDyn(&[b, rows, TIME_EMB_DIM])));
            let temb_rows = g.add(tzeros, temb1);
            let cond = g.concat(&[rows_obs, temb_rows], 2);
            let cond = g.reshape(cond, &[b * rows, self.cond_dim(rows)]);

            let lattice = assets.lattice.as_ref().expect("lattice");
            let p1 = g.input(lattice.p1.clone().into_dyn());
            let tokens = embed_actions(g, p1, apos, acol1, acol2, agrip);
            let tf = g.reshape(tokens, &[b * rows * t, STEP_DIM]);
            let emb = g.matmul(tf, tok_w);
            let emb = g.add(emb, tok_b);
            let emb = g.reshape(emb, &[b, rows, t, self.d_a]);
            let emb = g.permute(emb, &[0, 1, 3, 2]);
            let seqs = g.reshape(emb, &[b * rows, self.d_a, t]);

            let out = self.unet_spec(rows).forward(g, "unet", store, seqs, cond);
            let out = g.reshape(out, &[b, rows, self.d_a, t]);
            let ana_dec = g.input(lattice.ana_dec_t.clone().into_dyn());
            RowDecoder { d_a: self.d_a }.forward(g, "dec", store, out, ana_dec)
        } else {
            let cond = g.concat(&[obs_flat, temb], 1);
            let araw = g.concat(&[apos, acol1, acol2, agrip], 2);
            let af = g.reshape(araw, &[b * t, STEP_DIM]);
            let emb = g.matmul(af, tok_w);
            let emb = g.add(emb, tok_b);
            let emb = g.reshape(emb, &[b, t, self.d_a]);
            let seqs = g.permute(emb, &[0, 2, 1]);

            let out = self.unet_spec(rows).forward(g, "unet", store, seqs, cond);
            let out = g.permute(out, &[0, 2, 1]);
            let of = g.reshape(out, &[b * t, self.d_a]);
            let dec_w = g.param("dec.w", store.get("dec.w").clone());
            let dec_b = g.param("dec.b", store.get("dec.b").clone());
            let dec = g.matmul(of, dec_w);
            let dec = g.add(dec, dec_b);
            g.reshape(dec, &[b, t, STEP_DIM])
        }
    }

    /// Mean over the batch of the squared noise error summed over every
    /// chunk entry. Returns (loss, noise estimate).
    pub fn training_loss_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        assets: &PolicyAssets,
        obs: &ObsInputs,
        act: &ActInputs,
        t_emb: &Array2<f64>,
        eps: &Array3<f64>,
    ) -> (NodeId, NodeId) {
        let b = obs.image.shape()[0];
        let eh = self.eps_hat(g, store, assets, obs, act, t_emb);
        let e = g.input(eps.clone().into_dyn());
        let d = g.sub(eh, e);
        let sq = g.mul(d, d);
        let s = g.sum(sq);
        (g.scale(s, 1.0 / b as f64), eh)
    }
}

/// Fixed sphere-side tensors: the grid, the analysis operator restricted
/// to the visible hemisphere, and the visibility mask.
#[derive(Debug, Clone)]
pub struct SphereAssets {
    pub grid: SphereGrid,
    pub ana_sph_t: Array2<f64>,
    pub mask: Array2<f64>,
    pub cond_front: f64,
}

#[derive(Debug, Clone)]
pub struct PolicyAssets {
    pub lattice: Option<GroupLattice>,
    pub sphere: Option<SphereAssets>,
}

/// Observation-side inputs, already in normalized units.
#[derive(Debug, Clone)]
pub struct ObsInputs {
    /// [b, 3, h, w].
    pub image: Array4<f64>,
    /// [b, history, 3].
    pub prop_pos: Array3<f64>,
    pub prop_col1: Array3<f64>,
    pub prop_col2: Array3<f64>,
    /// [b, history, 1].
    pub prop_grip: Array3<f64>,
    /// Camera orientation per item, used for the world-frame correction.
    pub r_x: Vec<Rotation>,
}

impl ObsInputs {
    /// Builds a batch from one rendered image per item, a proprioception
    /// history of 10-vectors per item, and the camera orientation per item.
    pub fn from_raw(
        images: &[Array3<f64>],
        proprio: &[Vec<[f64; 10]>],
        r_x: &[Rotation],
    ) -> Self {
        let b = images.len();
        assert_eq!(b, proprio.len());
        assert_eq!(b, r_x.len());
        let (c, h, w) = images[0].dim();
        let hist = proprio[0].len();
        let mut image = Array4::zeros((b, c, h, w));
        let mut prop_pos = Array3::zeros((b, hist, 3));
        let mut prop_col1 = Array3::zeros((b, hist, 3));
        let mut prop_col2 = Array3::zeros((b, hist, 3));
        let mut prop_grip = Array3::zeros((b, hist, 1));
        for i in 0..b {
            image
                .index_axis_mut(Axis(0), i)
                .assign(&images[i].view());
            for (s, row) in proprio[i].iter().enumerate() {
                for d in 0..3 {
                    prop_pos[[i, s, d]] = row[d];
                    prop_col1[[i, s, d]] = row[3 + d];
                    prop_col2[[i, s, d]] = row[6 + d];
                }
                prop_grip[[i, s, 0]] = row[9];
            }
        }
        Self { image, prop_pos, prop_col1, prop_col2, prop_grip, r_x: r_x.to_vec() }
    }

    /// The same observations seen in a globally rotated world: the image is
    /// untouched (the camera rotated with the scene), world-frame vectors
    /// rotate by g, and the camera orientation picks up g on the left.
    pub fn rotated(&self, g: &Rotation) -> Self {
        let m = g.to_matrix();
        let rot3 = |a: &Array3<f64>| {
            let mut out = a.clone();
            for i in 0..a.shape()[0] {
                for s in 0..a.shape()[1] {
                    for r in 0..3 {
                        out[[i, s, r]] = (0..3).map(|c| m[r][c] * a[[i, s, c]]).sum();
                    }
                }
            }
            out
        };
        Self {
            image: self.image.clone(),
            prop_pos: rot3(&self.prop_pos),
            prop_col1: rot3(&self.prop_col1),
            prop_col2: rot3(&self.prop_col2),
            prop_grip: self.prop_grip.clone(),
            r_x: self.r_x.iter().map(|r| g.compose(r)).collect(),
        }
    }
}

/// Noisy chunk split into its vector and scalar components, [b, t, *].
#[derive(Debug, Clone)]
pub struct ActInputs {
    pub pos: Array3<f64>,
    pub col1: Array3<f64>,
    pub col2: Array3<f64>,
    pub grip: Array3<f64>,
}

impl ActInputs {
    /// Splits [t, 10] step rows per batch item into component arrays.
    pub fn from_steps(items: &[Array2<f64>]) -> Self {
        let b = items.len();
        let t = items[0].nrows();
        let mut pos = Array3::zeros((b, t, 3));
        let mut col1 = Array3::zeros((b, t, 3));
        let mut col2 = Array3::zeros((b, t, 3));
        let mut grip = Array3::zeros((b, t, 1));
        for (i, m) in items.iter().enumerate() {
            assert_eq!(m.dim(), (t, STEP_DIM), "uniform chunk shapes");
            for s in 0..t {
                for d in 0..3 {
                    pos[[i, s, d]] = m[[s, d]];
                    col1[[i, s, d]] = m[[s, 3 + d]];
                    col2[[i, s, d]] = m[[s, 6 + d]];
                }
                grip[[i, s, 0]] = m[[s, 9]];
            }
        }
        Self { pos, col1, col2, grip }
    }
}

/// Applies the rotation matrix to each step's three vector triples without
/// re-orthogonalizing, so it is safe on noisy or raw chunk values. The
/// gripper column is untouched.
pub fn rotate_steps_linear(steps: &Array2<f64>, g: &Rotation) -> Array2<f64> {
    assert_eq!(steps.ncols(), STEP_DIM);
    let m = g.to_matrix();
    let mut out = steps.clone();
    for s in 0..steps.nrows() {
        for block in 0..3 {
            let o = 3 * block;
            for i in 0..3 {
                out[[s, o + i]] = (0..3).map(|j| m[i][j] * steps[[s, o + j]]).sum();
            }
        }
    }
    out
}

/// Packs a flat [t * 10] vector back into step rows.
pub fn steps_from_flat(v: &Array1<f64>) -> Array2<f64> {
    assert_eq!(v.len() % STEP_DIM, 0);
    Array2::from_shape_vec((v.len() / STEP_DIM, STEP_DIM), v.to_vec()).unwrap()
}

/// Deterministic chunk sampler: runs the reverse process from the given
/// initial noise for a single observation. Identical inputs give
/// bit-identical outputs.
pub fn sample_chunk(
    spec: &PolicySpec,
    store: &ParamStore,
    assets: &PolicyAssets,
    obs: &ObsInputs,
    schedule: &NoiseSchedule,
    ddim_steps: usize,
    init: Array2<f64>,
) -> Array2<f64> {
    assert_eq!(obs.image.shape()[0], 1, "one observation at a time");
    assert_eq!(init.dim(), (spec.horizon, STEP_DIM));
    let times = schedule.ddim_times(ddim_steps);
    let mut a = init;
    for w in times.windows(2) {
        let (t_cur, t_prev) = (w[0], w[1]);
        let emb = timestep_embedding(t_cur);
        let mut t_emb = Array2::zeros((1, TIME_EMB_DIM));
        t_emb.row_mut(0).assign(&emb);
        let act = ActInputs::from_steps(std::slice::from_ref(&a));
        let mut g = Graph::new();
        let eh = spec.eps_hat(&mut g, store, assets, obs, &act, &t_emb);
        let ehv = g.value(eh);
        let eps_hat = Array1::from_iter(ehv.iter().copied());
        let flat = Array1::from_iter(a.iter().copied());
        let next = schedule.ddim_step(&flat, &eps_hat, t_cur, t_prev);
        a = steps_from_flat(&next);
    }
    a
}
