//! Layers that act on stacked Fourier blocks.
//!
//! Spherical features enter as rows of length (l_max + 1)^2, latent
//! features live as rows of length sum (2l+1)^2. Every learnable map here
//! touches degrees independently, so a left rotation of the input turns
//! into the same left rotation of the output. The pointwise nonlinearity
//! detours through signal samples on a fixed rotation lattice; when that
//! lattice is closed under a subgroup the detour commutes with the
//! subgroup exactly, not just approximately.

use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;

use crate::so3::SamplingSet;
use crate::spectral::coeffs::{so3_analysis_matrix, so3_synthesis_matrix};
use crate::spectral::{sh_dim, so3_dim, wigner_blocks, SpectralError};

use super::graph::{Graph, NodeId};
use super::params::{init_kaiming, ParamStore};

/// [b, c_in, d] x [c_out, c_in] -> [b, c_out, d]; the same mix at every
/// position d, which is what keeps the map degree-diagonal.
pub fn mix_channels(g: &mut Graph, x: NodeId, m: NodeId) -> NodeId {
    let s = g.shape(x).to_vec();
    let (b, c_in, d) = (s[0], s[1], s[2]);
    let c_out = g.shape(m)[0];
    let xp = g.permute(x, &[1, 0, 2]);
    let xf = g.reshape(xp, &[c_in, b * d]);
    let y = g.matmul(m, xf);
    let yr = g.reshape(y, &[c_out, b, d]);
    g.permute(yr, &[1, 0, 2])
}

/// Lifts spherical rows to latent rows degree by degree: each input
/// channel contributes the outer product of its degree-l column with a
/// learned kernel row, then channels mix.
#[derive(Debug, Clone, Copy)]
pub struct S2ToSo3 {
    pub l_max: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl S2ToSo3 {
    pub fn init_params<R: Rng>(&self, prefix: &str, store: &mut ParamStore, rng: &mut R) {
        for l in 0..=self.l_max {
            let d = 2 * l + 1;
            store.insert(
                &format!("{prefix}.l{l}.k"),
                init_kaiming(&[self.c_in, d], d, rng),
            );
            store.insert(
                &format!("{prefix}.l{l}.m"),
                init_kaiming(&[self.c_out, self.c_in], self.c_in, rng),
            );
        }
    }

    pub fn param_count(&self) -> usize {
        (0..=self.l_max)
            .map(|l| self.c_in * (2 * l + 1) + self.c_out * self.c_in)
            .sum()
    }

    /// sph [b, c_in, (l_max+1)^2] -> [b, c_out, so3 dim].
    pub fn forward(
        &self,
        g: &mut Graph,
        prefix: &str,
        store: &ParamStore,
        sph: NodeId,
    ) -> NodeId {
        let s = g.shape(sph).to_vec();
        let (b, c_in) = (s[0], s[1]);
        assert_eq!(c_in, self.c_in, "channel mismatch in spherical lift");
        assert_eq!(s[2], sh_dim(self.l_max), "row length mismatch in spherical lift");
        let mut parts = Vec::with_capacity(self.l_max + 1);
        let mut off = 0;
        for l in 0..=self.l_max {
            let d = 2 * l + 1;
            let k_name = format!("{prefix}.l{l}.k");
            let m_name = format!("{prefix}.l{l}.m");
            let k = g.param(&k_name, store.get(&k_name).clone());
            let m = g.param(&m_name, store.get(&m_name).clone());
            let c_l = g.slice_axis(sph, 2, off, off + d);
            let col = g.reshape(c_l, &[b, c_in, d, 1]);
            let row = g.reshape(k, &[1, c_in, 1, d]);
            // Row index comes from the input column, so a left rotation of
            // the input rotates the rows of the product block.
            let block = g.mul(col, row);
            let flat = g.reshape(block, &[b, c_in, d * d]);
            parts.push(mix_channels(g, flat, m));
            off += d;
        }
        g.concat(&parts, 2)
    }
}

/// Latent-to-latent map: a learned channel mix per degree, nothing else.
#[derive(Debug, Clone, Copy)]
pub struct So3ToSo3 {
    pub l_max: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl So3ToSo3 {
    pub fn init_params<R: Rng>(&self, prefix: &str, store: &mut ParamStore, rng: &mut R) {
        for l in 0..=self.l_max {
            store.insert(
                &format!("{prefix}.l{l}.m"),
                init_kaiming(&[self.c_out, self.c_in], self.c_in, rng),
            );
        }
    }

    pub fn param_count(&self) -> usize {
        (self.l_max + 1) * self.c_out * self.c_in
    }

    /// x [b, c_in, so3 dim] -> [b, c_out, so3 dim].
    pub fn forward(
        &self,
        g: &mut Graph,
        prefix: &str,
        store: &ParamStore,
        x: NodeId,
    ) -> NodeId {
        let s = g.shape(x).to_vec();
        assert_eq!(s[1], self.c_in, "channel mismatch in latent mix");
        assert_eq!(s[2], so3_dim(self.l_max), "row length mismatch in latent mix");
        let mut parts = Vec::with_capacity(self.l_max + 1);
        let mut off = 0;
        for l in 0..=self.l_max {
            let dd = (2 * l + 1) * (2 * l + 1);
            let m_name = format!("{prefix}.l{l}.m");
            let m = g.param(&m_name, store.get(&m_name).clone());
            let x_l = g.slice_axis(x, 2, off, off + dd);
            parts.push(mix_channels(g, x_l, m));
            off += dd;
        }
        g.concat(&parts, 2)
    }
}

/// Fixed tensors tied to one rotation lattice: synthesis and analysis
/// operators at the latent and first-degree bandwidths, plus the stacked
/// first-degree blocks used to featurize action vectors per row.
#[derive(Debug, Clone)]
pub struct GroupLattice {
    pub sampling: SamplingSet,
    pub l_latent: usize,
    /// [so3 dim(l_latent), rows]; right-multiply row-major features by this.
    pub syn_latent_t: Array2<f64>,
    /// [rows, so3 dim(l_latent)].
    pub ana_latent_t: Array2<f64>,
    /// [so3 dim(1), rows].
    pub syn_dec_t: Array2<f64>,
    /// [rows, so3 dim(1)].
    pub ana_dec_t: Array2<f64>,
    /// [3 * rows, 3]; row i*3+j holds column j of the first-degree block
    /// at lattice rotation i.
    pub p1: Array2<f64>,
    pub cond_latent: f64,
    pub cond_dec: f64,
}

impl GroupLattice {
    pub fn build(sampling: SamplingSet, l_latent: usize) -> Result<Self, SpectralError> {
        let rots = &sampling.members;
        if rots.len() < so3_dim(l_latent) {
            return Err(SpectralError::TooFewSamples {
                got: rots.len(),
                need: so3_dim(l_latent),
            });
        }
        let syn_latent = so3_synthesis_matrix(rots, l_latent);
        let (ana_latent, cond_latent) = so3_analysis_matrix(rots, l_latent)?;
        let syn_dec = so3_synthesis_matrix(rots, 1);
        let (ana_dec, cond_dec) = so3_analysis_matrix(rots, 1)?;
        let n = rots.len();
        let mut p1 = Array2::zeros((3 * n, 3));
        for (i, r) in rots.iter().enumerate() {
            let b1 = &wigner_blocks(r, 1).blocks[1];
            for j in 0..3 {
                for m in 0..3 {
                    p1[[i * 3 + j, m]] = b1[[m, j]];
                }
            }
        }
        Ok(Self {
            sampling,
            l_latent,
            syn_latent_t: syn_latent.t().to_owned(),
            ana_latent_t: ana_latent.t().to_owned(),
            syn_dec_t: syn_dec.t().to_owned(),
            ana_dec_t: ana_dec.t().to_owned(),
            p1,
            cond_latent,
            cond_dec,
        })
    }

    pub fn rows(&self) -> usize {
        self.sampling.members.len()
    }
}

/// Pointwise silu in signal space: synthesize on the lattice, activate,
/// analyze back. `syn_t` and `ana_t` are input nodes holding the
/// transposed lattice operators.
pub fn sampled_silu(g: &mut Graph, x: NodeId, syn_t: NodeId, ana_t: NodeId) -> NodeId {
    let s = g.shape(x).to_vec();
    let xf = g.reshape(x, &[s[0] * s[1], s[2]]);
    let samples = g.matmul(xf, syn_t);
    let act = g.silu(samples);
    let back = g.matmul(act, ana_t);
    g.reshape(back, &[s[0], s[1], s[2]])
}

/// e_o rows: the latent signal of every channel evaluated at every
/// lattice rotation. [b, c, dim] -> [b, rows, c].
pub fn sample_rows(g: &mut Graph, latent: NodeId, syn_t: NodeId) -> NodeId {
    let s = g.shape(latent).to_vec();
    let n = g.shape(syn_t)[1];
    let xf = g.reshape(latent, &[s[0] * s[1], s[2]]);
    let y = g.matmul(xf, syn_t);
    let yr = g.reshape(y, &[s[0], s[1], n]);
    g.permute(yr, &[0, 2, 1])
}

/// Multiplies each batch item's coefficient rows by its own fixed matrix
/// (supplied transposed), for corrections that vary across the batch.
pub fn rotate_rows_per_item(g: &mut Graph, x: NodeId, mats_t: &[NodeId]) -> NodeId {
    let s = g.shape(x).to_vec();
    assert_eq!(s[0], mats_t.len(), "one matrix per batch item");
    let mut parts = Vec::with_capacity(s[0]);
    for (i, m) in mats_t.iter().enumerate() {
        let xi = g.slice_axis(x, 0, i, i + 1);
        let xf = g.reshape(xi, &[s[1], s[2]]);
        let y = g.matmul(xf, *m);
        parts.push(g.reshape(y, &[1, s[1], s[2]]));
    }
    g.concat(&parts, 0)
}

/// Reorders the last axis from world (x, y, z) components to the
/// spectral (y, z, x) component order.
pub fn xyz_to_spectral(g: &mut Graph, v: NodeId) -> NodeId {
    let rank = g.shape(v).len();
    let axis = rank - 1;
    let x = g.slice_axis(v, axis, 0, 1);
    let y = g.slice_axis(v, axis, 1, 2);
    let z = g.slice_axis(v, axis, 2, 3);
    g.concat(&[y, z, x], axis)
}

/// Inverse of [`xyz_to_spectral`].
pub fn spectral_to_xyz(g: &mut Graph, v: NodeId) -> NodeId {
    let rank = g.shape(v).len();
    let axis = rank - 1;
    let y = g.slice_axis(v, axis, 0, 1);
    let z = g.slice_axis(v, axis, 1, 2);
    let x = g.slice_axis(v, axis, 2, 3);
    g.concat(&[x, y, z], axis)
}

/// Mixes proprioception into channel pairs: one rotating vector and one
/// invariant scalar per output channel. Vector inputs are the gripper
/// position and the first two grasp-frame columns for each history step,
/// scalar inputs are the gripper widths. Only the scalar side carries a
/// bias, a vector bias would pin a direction.
#[derive(Debug, Clone, Copy)]
pub struct ProprioMix {
    pub history: usize,
    pub c_out: usize,
}

impl ProprioMix {
    pub fn init_params<R: Rng>(&self, prefix: &str, store: &mut ParamStore, rng: &mut R) {
        store.insert(
            &format!("{prefix}.w1"),
            init_kaiming(&[self.c_out, 3 * self.history], 3 * self.history, rng),
        );
        store.insert(
            &format!("{prefix}.w0"),
            init_kaiming(&[self.c_out, self.history], self.history, rng),
        );
        store.insert(
            &format!("{prefix}.b0"),
            ArrayD::zeros(IxDyn(&[1, self.c_out, 1])),
        );
    }

    pub fn param_count(&self) -> usize {
        self.c_out * 3 * self.history + self.c_out * self.history + self.c_out
    }

    /// pos, col1, col2 [b, history, 3] in world (x, y, z); grip
    /// [b, history, 1]. Returns (vector [b, c_out, 3] in spectral order,
    /// scalar [b, c_out, 1]).
    pub fn forward(
        &self,
        g: &mut Graph,
        prefix: &str,
        store: &ParamStore,
        pos: NodeId,
        col1: NodeId,
        col2: NodeId,
        grip: NodeId,
    ) -> (NodeId, NodeId) {
        assert_eq!(g.shape(pos)[1], self.history, "history mismatch");
        let stacked = g.concat(&[pos, col1, col2], 1);
        let vecs = xyz_to_spectral(g, stacked);
        let w1_name = format!("{prefix}.w1");
        let w0_name = format!("{prefix}.w0");
        let b0_name = format!("{prefix}.b0");
        let w1 = g.param(&w1_name, store.get(&w1_name).clone());
        let w0 = g.param(&w0_name, store.get(&w0_name).clone());
        let b0 = g.param(&b0_name, store.get(&b0_name).clone());
        let rho1 = mix_channels(g, vecs, w1);
        let mixed0 = mix_channels(g, grip, w0);
        let rho0 = g.add(mixed0, b0);
        (rho1, rho0)
    }
}

/// Places channel pairs into Fourier rows: the scalar fills degree zero,
/// the vector fills the first column of degree one, every higher degree
/// stays zero. [b, c, 1] + [b, c, 3] -> [b, c, so3 dim(l_max)].
pub fn embed_irreps(g: &mut Graph, rho0: NodeId, rho1: NodeId, l_max: usize) -> NodeId {
    let s = g.shape(rho1).to_vec();
    let (b, c) = (s[0], s[1]);
    let col = g.reshape(rho1, &[b, c, 3, 1]);
    let pad = g.input(ArrayD::zeros(IxDyn(&[b, c, 3, 2])));
    let block1 = g.concat(&[col, pad], 3);
    let block1 = g.reshape(block1, &[b, c, 9]);
    let mut parts = vec![rho0, block1];
    if l_max >= 2 {
        let rest = so3_dim(l_max) - 10;
        parts.push(g.input(ArrayD::zeros(IxDyn(&[b, c, rest]))));
    }
    g.concat(&parts, 2)
}

/// Per-row action features: each first-degree action vector v becomes the
/// nine numbers D1(s_i)^T v, the gripper channel is copied to every row.
/// pos, col1, col2 [b, t, 3] world order; grip [b, t, 1]; p1 is the
/// lattice tensor as an input node. Returns [b, rows, t, 10].
pub fn embed_actions(
    g: &mut Graph,
    p1: NodeId,
    pos: NodeId,
    col1: NodeId,
    col2: NodeId,
    grip: NodeId,
) -> NodeId {
    let s = g.shape(pos).to_vec();
    let (b, t) = (s[0], s[1]);
    let n = g.shape(p1)[0] / 3;
    let p = g.reshape(pos, &[b, t, 1, 3]);
    let c1 = g.reshape(col1, &[b, t, 1, 3]);
    let c2 = g.reshape(col2, &[b, t, 1, 3]);
    let stacked = g.concat(&[p, c1, c2], 2);
    let spec = xyz_to_spectral(g, stacked);
    let by_m = g.permute(spec, &[3, 0, 1, 2]);
    let flat = g.reshape(by_m, &[3, b * t * 3]);
    let phi = g.matmul(p1, flat);
    let phi = g.reshape(phi, &[n, 3, b, t, 3]);
    let phi = g.permute(phi, &[2, 0, 3, 4, 1]);
    let phi = g.reshape(phi, &[b, n, t, 9]);
    let grip_r = g.reshape(grip, &[b, 1, t, 1]);
    let zeros = g.input(ArrayD::zeros(IxDyn(&[b, n, t, 1])));
    let grip_b = g.add(zeros, grip_r);
    g.concat(&[phi, grip_b], 3)
}

/// Turns denoiser tokens back into pose updates: analyze the rows at
/// bandwidth one, then mix the resulting vector channels into three
/// output vectors and the scalar channels into the gripper channel.
/// Output layout per step: position, two frame columns, gripper, all in
/// world (x, y, z) components.
#[derive(Debug, Clone, Copy)]
pub struct RowDecoder {
    pub d_a: usize,
}

impl RowDecoder {
    pub fn init_params<R: Rng>(&self, prefix: &str, store: &mut ParamStore, rng: &mut R) {
        store.insert(
            &format!("{prefix}.w1"),
            init_kaiming(&[3 * self.d_a, 3], 3 * self.d_a, rng),
        );
        store.insert(
            &format!("{prefix}.w0"),
            init_kaiming(&[self.d_a, 1], self.d_a, rng),
        );
        store.insert(&format!("{prefix}.b0"), ArrayD::zeros(IxDyn(&[1])));
    }

    pub fn param_count(&self) -> usize {
        3 * self.d_a * 3 + self.d_a + 1
    }

    /// tokens [b, rows, d_a, t], ana_dec_t input node [rows, 10] ->
    /// [b, t, 10].
    pub fn forward(
        &self,
        g: &mut Graph,
        prefix: &str,
        store: &ParamStore,
        tokens: NodeId,
        ana_dec_t: NodeId,
    ) -> NodeId {
        let s = g.shape(tokens).to_vec();
        let (b, n, d_a, t) = (s[0], s[1], s[2], s[3]);
        assert_eq!(d_a, self.d_a, "token width mismatch in decoder");
        let by_row = g.permute(tokens, &[0, 2, 3, 1]);
        let flat = g.reshape(by_row, &[b * d_a * t, n]);
        let co = g.matmul(flat, ana_dec_t);
        let co = g.reshape(co, &[b, d_a, t, 10]);
        let rho0 = g.slice_axis(co, 3, 0, 1);
        let block1 = g.slice_axis(co, 3, 1, 10);
        let block1 = g.reshape(block1, &[b, d_a, t, 3, 3]);
        let by_step = g.permute(block1, &[0, 2, 3, 1, 4]);
        let vf = g.reshape(by_step, &[b * t * 3, d_a * 3]);
        let w1_name = format!("{prefix}.w1");
        let w0_name = format!("{prefix}.w0");
        let b0_name = format!("{prefix}.b0");
        let w1 = g.param(&w1_name, store.get(&w1_name).clone());
        let mixed = g.matmul(vf, w1);
        let mixed = g.reshape(mixed, &[b, t, 3, 3]);
        let by_out = g.permute(mixed, &[0, 1, 3, 2]);
        let world = spectral_to_xyz(g, by_out);
        let vecs = g.reshape(world, &[b, t, 9]);
        let scal = g.permute(rho0, &[0, 2, 1, 3]);
        let scal = g.reshape(scal, &[b * t, d_a]);
        let w0 = g.param(&w0_name, store.get(&w0_name).clone());
        let b0 = g.param(&b0_name, store.get(&b0_name).clone());
        let grip = g.matmul(scal, w0);
        let grip = g.add(grip, b0);
        let grip = g.reshape(grip, &[b, t, 1]);
        g.concat(&[vecs, grip], 2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::finite::standard_offsets;
    use crate::so3::{FiniteGroup, Rotation};
    use crate::spectral::{rotate_so3_coeffs, rotate_sph_coeffs};
    use crate::util::substream;
    use ndarray::Array1;
    use rand::Rng;

    fn random_rows(b: usize, c: usize, d: usize, rng: &mut impl Rng) -> ArrayD<f64> {
        ArrayD::from_shape_fn(IxDyn(&[b, c, d]), |_| rng.gen_range(-1.0..1.0))
    }

    fn item_rows(v: &ArrayD<f64>, b: usize) -> Array2<f64> {
        let s = v.shape();
        let mut out = Array2::zeros((s[1], s[2]));
        for c in 0..s[1] {
            for d in 0..s[2] {
                out[[c, d]] = v[[b, c, d]];
            }
        }
        out
    }

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let mut m = 0.0f64;
        for (x, y) in a.iter().zip(b.iter()) {
            m = m.max((x - y).abs());
        }
        m
    }

    fn icosahedral_lattice(l_latent: usize) -> GroupLattice {
        let group = FiniteGroup::icosahedral().unwrap();
        let sampling = SamplingSet::build(group, vec![Rotation::IDENTITY]).unwrap();
        GroupLattice::build(sampling, l_latent).unwrap()
    }

    #[test]
    fn zero_kernels_give_zero_output() {
        let spec = S2ToSo3 { l_max: 2, c_in: 3, c_out: 4 };
        let mut store = ParamStore::new();
        let mut rng = substream(61, "lift-params", 0);
        spec.init_params("lift", &mut store, &mut rng);
        for l in 0..=2 {
            store.get_mut(&format!("lift.l{l}.k")).fill(0.0);
        }
        let mut g = Graph::new();
        let x = g.input(random_rows(2, 3, sh_dim(2), &mut rng));
        let y = spec.forward(&mut g, "lift", &store, x);
        assert!(g.value(y).iter().all(|v| *v == 0.0));
        assert_eq!(g.shape(y), &[2, 4, so3_dim(2)]);
    }

    #[test]
    fn linear_layers_carry_rotations_through() {
        let lift = S2ToSo3 { l_max: 2, c_in: 2, c_out: 3 };
        let mix = So3ToSo3 { l_max: 2, c_in: 3, c_out: 2 };
        let mut store = ParamStore::new();
        let mut rng = substream(61, "equiv-params", 1);
        lift.init_params("lift", &mut store, &mut rng);
        mix.init_params("mix", &mut store, &mut rng);
        let base = random_rows(1, 2, sh_dim(2), &mut rng);

        let run = |input: &ArrayD<f64>| -> Array2<f64> {
            let mut g = Graph::new();
            let x = g.input(input.clone());
            let mid = lift.forward(&mut g, "lift", &store, x);
            let y = mix.forward(&mut g, "mix", &store, mid);
            item_rows(&g.value(y).clone(), 0)
        };

        let out_base = run(&base);
        let group = FiniteGroup::icosahedral().unwrap();
        let mut worst = 0.0f64;
        for r in &group.elements {
            let rot_in = rotate_sph_coeffs(&item_rows(&base, 0), 2, r);
            let rot_in_dyn = rot_in.insert_axis(ndarray::Axis(0)).into_dyn();
            let got = run(&rot_in_dyn);
            let want = rotate_so3_coeffs(&out_base, 2, r);
            worst = worst.max(max_abs_diff(&got, &want));
        }
        assert!(worst < 1e-9, "worst deviation {worst:.3e}");
    }

    #[test]
    fn sampled_silu_is_exact_on_the_lattice_group() {
        let lat = icosahedral_lattice(2);
        let mut rng = substream(61, "nonlin", 2);
        let base = random_rows(2, 3, so3_dim(2), &mut rng);

        let run = |input: &ArrayD<f64>| -> Vec<Array2<f64>> {
            let mut g = Graph::new();
            let x = g.input(input.clone());
            let syn = g.input(lat.syn_latent_t.clone().into_dyn());
            let ana = g.input(lat.ana_latent_t.clone().into_dyn());
            let y = sampled_silu(&mut g, x, syn, ana);
            let v = g.value(y).clone();
            (0..2).map(|b| item_rows(&v, b)).collect()
        };

        let out_base = run(&base);
        let mut worst = 0.0f64;
        for r in lat.sampling.group.elements.clone() {
            let mut rot_in = base.clone();
            for b in 0..2 {
                let rows = rotate_so3_coeffs(&item_rows(&base, b), 2, &r);
                for c in 0..3 {
                    for d in 0..so3_dim(2) {
                        rot_in[[b, c, d]] = rows[[c, d]];
                    }
                }
            }
            let got = run(&rot_in);
            for b in 0..2 {
                let want = rotate_so3_coeffs(&out_base[b], 2, &r);
                worst = worst.max(max_abs_diff(&got[b], &want));
            }
        }
        assert!(worst < 1e-9, "worst deviation {worst:.3e}");
    }

    #[test]
    fn eight_offset_octagonal_lattice_is_rank_deficient() {
        // Each z-axis orbit contributes one functional to the
        // orbit-averaged component, whose span has (l_max + 1)^2
        // dimensions, so bandwidth two needs at least nine orbits no
        // matter how large the orbit itself is.
        let group = FiniteGroup::cyclic(8).unwrap();
        let sampling = SamplingSet::build(group, standard_offsets(8)).unwrap();
        assert_eq!(sampling.members.len(), 64);
        assert!(GroupLattice::build(sampling, 2).is_err());
    }

    #[test]
    fn octagonal_lattice_is_well_conditioned() {
        let group = FiniteGroup::cyclic(8).unwrap();
        let sampling = SamplingSet::build(group, standard_offsets(9)).unwrap();
        assert_eq!(sampling.members.len(), 72);
        let lat = GroupLattice::build(sampling, 2).unwrap();
        assert!(lat.cond_latent < 1e3, "latent cond {:.3e}", lat.cond_latent);
        assert!(lat.cond_dec < 1e3, "decoder cond {:.3e}", lat.cond_dec);
        let round = lat.ana_latent_t.t().dot(&lat.syn_latent_t.t());
        let dim = so3_dim(2);
        let mut worst = 0.0f64;
        for i in 0..dim {
            for j in 0..dim {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((round[[i, j]] - want).abs());
            }
        }
        assert!(worst < 1e-8, "analysis round trip off by {worst:.3e}");
    }

    #[test]
    fn proprio_mix_rotates_vectors_and_fixes_scalars() {
        let spec = ProprioMix { history: 2, c_out: 5 };
        let mut store = ParamStore::new();
        let mut rng = substream(61, "proprio", 3);
        spec.init_params("pp", &mut store, &mut rng);

        let pos = ArrayD::from_shape_fn(IxDyn(&[1, 2, 3]), |_| rng.gen_range(-1.0..1.0));
        let col1 = ArrayD::from_shape_fn(IxDyn(&[1, 2, 3]), |_| rng.gen_range(-1.0..1.0));
        let col2 = ArrayD::from_shape_fn(IxDyn(&[1, 2, 3]), |_| rng.gen_range(-1.0..1.0));
        let grip = ArrayD::from_shape_fn(IxDyn(&[1, 2, 1]), |_| rng.gen_range(0.0..1.0));

        let run = |p: &ArrayD<f64>, c1: &ArrayD<f64>, c2: &ArrayD<f64>| {
            let mut g = Graph::new();
            let pn = g.input(p.clone());
            let c1n = g.input(c1.clone());
            let c2n = g.input(c2.clone());
            let gn = g.input(grip.clone());
            let (v, s) = spec.forward(&mut g, "pp", &store, pn, c1n, c2n, gn);
            (g.value(v).clone(), g.value(s).clone())
        };

        let (v0, s0) = run(&pos, &col1, &col2);
        let r = Rotation::random(&mut substream(61, "proprio-rot", 0));
        let rot = |v: &ArrayD<f64>| {
            let mut out = v.clone();
            for k in 0..2 {
                let p = r.apply([v[[0, k, 0]], v[[0, k, 1]], v[[0, k, 2]]]);
                for m in 0..3 {
                    out[[0, k, m]] = p[m];
                }
            }
            out
        };
        let (v1, s1) = run(&rot(&pos), &rot(&col1), &rot(&col2));

        let d1 = wigner_blocks(&r, 1).blocks[1].clone();
        let mut worst = 0.0f64;
        for c in 0..5 {
            let x = Array1::from(vec![v0[[0, c, 0]], v0[[0, c, 1]], v0[[0, c, 2]]]);
            let want = d1.dot(&x);
            for m in 0..3 {
                worst = worst.max((v1[[0, c, m]] - want[m]).abs());
            }
            worst = worst.max((s1[[0, c, 0]] - s0[[0, c, 0]]).abs());
        }
        assert!(worst < 1e-12, "worst deviation {worst:.3e}");
    }

    #[test]
    fn irrep_embedding_fills_only_the_allowed_slots() {
        let mut rng = substream(61, "embed", 4);
        let rho0 = random_rows(1, 4, 1, &mut rng);
        let rho1 = random_rows(1, 4, 3, &mut rng);
        let mut g = Graph::new();
        let r0 = g.input(rho0.clone());
        let r1 = g.input(rho1.clone());
        let e = embed_irreps(&mut g, r0, r1, 2);
        let v = g.value(e);
        assert_eq!(v.shape(), &[1, 4, so3_dim(2)]);
        for c in 0..4 {
            assert_eq!(v[[0, c, 0]], rho0[[0, c, 0]]);
            for m in 0..3 {
                assert_eq!(v[[0, c, 1 + m * 3]], rho1[[0, c, m]]);
                assert_eq!(v[[0, c, 1 + m * 3 + 1]], 0.0);
                assert_eq!(v[[0, c, 1 + m * 3 + 2]], 0.0);
            }
            for d in 10..so3_dim(2) {
                assert_eq!(v[[0, c, d]], 0.0);
            }
        }

        let r = Rotation::random(&mut substream(61, "embed-rot", 0));
        let d1 = wigner_blocks(&r, 1).blocks[1].clone();
        let mut rho1_rot = rho1.clone();
        for c in 0..4 {
            let x = Array1::from(vec![rho1[[0, c, 0]], rho1[[0, c, 1]], rho1[[0, c, 2]]]);
            let y = d1.dot(&x);
            for m in 0..3 {
                rho1_rot[[0, c, m]] = y[m];
            }
        }
        let mut g2 = Graph::new();
        let r0b = g2.input(rho0.clone());
        let r1b = g2.input(rho1_rot);
        let e2 = embed_irreps(&mut g2, r0b, r1b, 2);
        let want = rotate_so3_coeffs(&item_rows(&g.value(e).clone(), 0), 2, &r);
        let got = item_rows(&g2.value(e2).clone(), 0);
        assert!(max_abs_diff(&got, &want) < 1e-12);
    }

    #[test]
    fn action_rows_permute_with_the_group() {
        let group = FiniteGroup::cyclic(8).unwrap();
        let sampling = SamplingSet::build(group, standard_offsets(4)).unwrap();
        let lat = GroupLattice::build(sampling, 1).unwrap();
        let n = lat.rows();
        let mut rng = substream(61, "actions", 5);
        let pos = ArrayD::from_shape_fn(IxDyn(&[1, 2, 3]), |_| rng.gen_range(-1.0..1.0));
        let col1 = ArrayD::from_shape_fn(IxDyn(&[1, 2, 3]), |_| rng.gen_range(-1.0..1.0));
        let col2 = ArrayD::from_shape_fn(IxDyn(&[1, 2, 3]), |_| rng.gen_range(-1.0..1.0));
        let grip = ArrayD::from_shape_fn(IxDyn(&[1, 2, 1]), |_| rng.gen_range(0.0..1.0));

        let run = |p: &ArrayD<f64>, c1: &ArrayD<f64>, c2: &ArrayD<f64>| {
            let mut g = Graph::new();
            let p1 = g.input(lat.p1.clone().into_dyn());
            let pn = g.input(p.clone());
            let c1n = g.input(c1.clone());
            let c2n = g.input(c2.clone());
            let gn = g.input(grip.clone());
            let e = embed_actions(&mut g, p1, pn, c1n, c2n, gn);
            g.value(e).clone()
        };

        let base = run(&pos, &col1, &col2);
        for (h, r) in lat.sampling.group.elements.clone().iter().enumerate() {
            let rot = |v: &ArrayD<f64>| {
                let mut out = v.clone();
                for k in 0..2 {
                    let p = r.apply([v[[0, k, 0]], v[[0, k, 1]], v[[0, k, 2]]]);
                    for m in 0..3 {
                        out[[0, k, m]] = p[m];
                    }
                }
                out
            };
            let got = run(&rot(&pos), &rot(&col1), &rot(&col2));
            let inv = lat.sampling.group.inverse[h];
            let perm = &lat.sampling.orbit_perm[inv];
            let mut worst = 0.0f64;
            for i in 0..n {
                for t in 0..2 {
                    for f in 0..10 {
                        worst = worst
                            .max((got[[0, i, t, f]] - base[[0, perm[i], t, f]]).abs());
                    }
                }
            }
            assert!(worst < 1e-12, "element {h}: worst {worst:.3e}");
        }
    }

    #[test]
    fn row_decoder_turns_permutations_into_rotations() {
        let group = FiniteGroup::cyclic(8).unwrap();
        let sampling = SamplingSet::build(group, standard_offsets(4)).unwrap();
        let lat = GroupLattice::build(sampling, 1).unwrap();
        let n = lat.rows();
        let dec = RowDecoder { d_a: 4 };
        let mut store = ParamStore::new();
        let mut rng = substream(61, "decoder", 6);
        dec.init_params("dec", &mut store, &mut rng);
        let tokens = ArrayD::from_shape_fn(IxDyn(&[1, n, 4, 2]), |_| rng.gen_range(-1.0..1.0));

        let run = |tok: &ArrayD<f64>| -> ArrayD<f64> {
            let mut g = Graph::new();
            let ana = g.input(lat.ana_dec_t.clone().into_dyn());
            let x = g.input(tok.clone());
            let y = dec.forward(&mut g, "dec", &store, x, ana);
            g.value(y).clone()
        };

        let base = run(&tokens);
        for (h, r) in lat.sampling.group.elements.clone().iter().enumerate() {
            let inv = lat.sampling.group.inverse[h];
            let perm = &lat.sampling.orbit_perm[inv];
            let mut permuted = tokens.clone();
            for i in 0..n {
                for c in 0..4 {
                    for t in 0..2 {
                        permuted[[0, i, c, t]] = tokens[[0, perm[i], c, t]];
                    }
                }
            }
            let got = run(&permuted);
            let mut worst = 0.0f64;
            for t in 0..2 {
                for v in 0..3 {
                    let x = [
                        base[[0, t, v * 3]],
                        base[[0, t, v * 3 + 1]],
                        base[[0, t, v * 3 + 2]],
                    ];
                    let w = r.apply(x);
                    for m in 0..3 {
                        worst = worst.max((got[[0, t, v * 3 + m]] - w[m]).abs());
                    }
                }
                worst = worst.max((got[[0, t, 9]] - base[[0, t, 9]]).abs());
            }
            assert!(worst < 1e-9, "element {h}: worst {worst:.3e}");
        }
    }

    #[test]
    fn per_item_rotation_applies_each_matrix_once() {
        let mut rng = substream(61, "per-item", 7);
        let x = random_rows(2, 3, 4, &mut rng);
        let m0 = Array2::from_shape_fn((4, 4), |_| rng.gen_range(-1.0..1.0));
        let m1 = Array2::from_shape_fn((4, 4), |_| rng.gen_range(-1.0..1.0));
        let mut g = Graph::new();
        let xn = g.input(x.clone());
        let m0n = g.input(m0.clone().into_dyn());
        let m1n = g.input(m1.clone().into_dyn());
        let y = rotate_rows_per_item(&mut g, xn, &[m0n, m1n]);
        let v = g.value(y);
        let want0 = item_rows(&x, 0).dot(&m0);
        let want1 = item_rows(&x, 1).dot(&m1);
        assert!(max_abs_diff(&item_rows(&v.clone(), 0), &want0) < 1e-12);
        assert!(max_abs_diff(&item_rows(&v.clone(), 1), &want1) < 1e-12);
    }

    #[test]
    fn spectral_chain_gradients_match_fd_spot_checks() {
        let group = FiniteGroup::cyclic(8).unwrap();
        let sampling = SamplingSet::build(group, standard_offsets(4)).unwrap();
        let lat = GroupLattice::build(sampling, 1).unwrap();
        let lift = S2ToSo3 { l_max: 1, c_in: 2, c_out: 2 };
        let mix = So3ToSo3 { l_max: 1, c_in: 2, c_out: 2 };
        let mut store = ParamStore::new();
        let mut rng = substream(61, "fd-params", 8);
        lift.init_params("lift", &mut store, &mut rng);
        mix.init_params("mix", &mut store, &mut rng);
        let input = random_rows(2, 2, sh_dim(1), &mut rng);

        let loss_of = |st: &ParamStore| -> f64 {
            let mut g = Graph::new();
            let x = g.input(input.clone());
            let syn = g.input(lat.syn_latent_t.clone().into_dyn());
            let ana = g.input(lat.ana_latent_t.clone().into_dyn());
            let a = lift.forward(&mut g, "lift", st, x);
            let b = sampled_silu(&mut g, a, syn, ana);
            let c = mix.forward(&mut g, "mix", st, b);
            let sq = g.mul(c, c);
            let l = g.sum(sq);
            g.value(l).sum()
        };

        let mut g = Graph::new();
        let x = g.input(input.clone());
        let syn = g.input(lat.syn_latent_t.clone().into_dyn());
        let ana = g.input(lat.ana_latent_t.clone().into_dyn());
        let a = lift.forward(&mut g, "lift", &store, x);
        let b = sampled_silu(&mut g, a, syn, ana);
        let c = mix.forward(&mut g, "mix", &store, b);
        let sq = g.mul(c, c);
        let l = g.sum(sq);
        let grads = g.backward(l);
        let by_name = g.grads_by_name(&grads);

        let mut pick = substream(61, "fd-pick", 9);
        let names: Vec<String> = store.names().cloned().collect();
        for t in 0..6 {
            let name = &names[pick.gen_range(0..names.len())];
            let len = store.get(name).len();
            let k = pick.gen_range(0..len);
            let eps = 1e-5;
            let mut plus = store.clone();
            plus.get_mut(name).as_slice_mut().unwrap()[k] += eps;
            let mut minus = store.clone();
            minus.get_mut(name).as_slice_mut().unwrap()[k] -= eps;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
            let an = by_name[name].as_slice().unwrap()[k];
            let denom = fd.abs().max(an.abs()).max(1e-8);
            assert!(
                (fd - an).abs() / denom < 1e-4,
                "trial {t} {name}[{k}]: {an:.6e} vs {fd:.6e}"
            );
        }
    }
}
