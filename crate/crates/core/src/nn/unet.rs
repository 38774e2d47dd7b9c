//! Temporal U-Net over action tokens.
//!
//! The net sees a batch of independent token sequences [rows, channels,
//! steps]; lattice rows are folded into the batch axis by the caller, so
//! permuting rows permutes outputs bit for bit and the symmetry handling
//! stays entirely outside this file. Conditioning enters through feature
//! modulation after every convolution.

use ndarray::{Array1, ArrayD, IxDyn};
use rand::Rng;

use super::graph::{Graph, NodeId};
use super::params::{init_kaiming, ParamStore};

pub const TIME_EMB_DIM: usize = 32;

/// Sinusoidal embedding of a diffusion step index, frequencies spaced
/// geometrically from 1 to 1/10000.
pub fn timestep_embedding(k: usize) -> Array1<f64> {
    let half = TIME_EMB_DIM / 2;
    let mut out = Array1::zeros(TIME_EMB_DIM);
    for i in 0..half {
        let freq = (-(i as f64) * (10000.0f64).ln() / (half as f64 - 1.0)).exp();
        out[2 * i] = (k as f64 * freq).sin();
        out[2 * i + 1] = (k as f64 * freq).cos();
    }
    out
}

/// Two-level encoder/decoder over the step axis with skip connections.
#[derive(Debug, Clone, Copy)]
pub struct UNetSpec {
    /// Token channels at input and output.
    pub d_in: usize,
    /// Channel widths at full, half, and quarter resolution.
    pub widths: [usize; 3],
    /// Length of the conditioning vector per sequence.
    pub cond_dim: usize,
}

struct BlockDims {
    c_in: usize,
    c_out: usize,
}

impl UNetSpec {
    fn blocks(&self) -> Vec<(String, BlockDims)> {
        let [w1, w2, w3] = self.widths;
        vec![
            ("d1a".into(), BlockDims { c_in: self.d_in, c_out: w1 }),
            ("d1b".into(), BlockDims { c_in: w1, c_out: w1 }),
            ("d2a".into(), BlockDims { c_in: w1, c_out: w2 }),
            ("d2b".into(), BlockDims { c_in: w2, c_out: w2 }),
            ("ba".into(), BlockDims { c_in: w2, c_out: w3 }),
            ("bb".into(), BlockDims { c_in: w3, c_out: w3 }),
            ("u1a".into(), BlockDims { c_in: w3 + w2, c_out: w2 }),
            ("u1b".into(), BlockDims { c_in: w2, c_out: w2 }),
            ("u2a".into(), BlockDims { c_in: w2 + w1, c_out: w1 }),
            ("u2b".into(), BlockDims { c_in: w1, c_out: w1 }),
        ]
    }

    pub fn init_params<R: Rng>(&self, prefix: &str, store: &mut ParamStore, rng: &mut R) {
        for (name, d) in self.blocks() {
            store.insert(
                &format!("{prefix}.{name}.w"),
                init_kaiming(&[d.c_out, d.c_in, 3], d.c_in * 3, rng),
            );
            store.insert(
                &format!("{prefix}.{name}.b"),
                ArrayD::zeros(IxDyn(&[1, d.c_out, 1])),
            );
            store.insert(
                &format!("{prefix}.{name}.fw"),
                init_kaiming(&[self.cond_dim, 2 * d.c_out], self.cond_dim, rng),
            );
            store.insert(
                &format!("{prefix}.{name}.fb"),
                ArrayD::zeros(IxDyn(&[1, 2 * d.c_out])),
            );
        }
        // Zero head: the net starts out predicting zero, which keeps the
        // first denoising steps unbiased and gives a clean null test.
        store.insert(
            &format!("{prefix}.head.w"),
            ArrayD::zeros(IxDyn(&[self.d_in, self.widths[0], 3])),
        );
        store.insert(
            &format!("{prefix}.head.b"),
            ArrayD::zeros(IxDyn(&[1, self.d_in, 1])),
        );
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for (_, d) in self.blocks() {
            n += d.c_out * d.c_in * 3 + d.c_out;
            n += self.cond_dim * 2 * d.c_out + 2 * d.c_out;
        }
        n + self.d_in * self.widths[0] * 3 + self.d_in
    }

    /// x [seqs, d_in, steps], cond [seqs, cond_dim] -> [seqs, d_in, steps].
    /// Steps must divide by four for the two poolings.
    pub fn forward(
        &self,
        g: &mut Graph,
        prefix: &str,
        store: &ParamStore,
        x: NodeId,
        cond: NodeId,
    ) -> NodeId {
        let s = g.shape(x).to_vec();
        assert_eq!(s[1], self.d_in, "token channel mismatch");
        assert_eq!(s[2] % 4, 0, "step count must divide by four");
        assert_eq!(g.shape(cond)[0], s[0], "one conditioning row per sequence");
        assert_eq!(g.shape(cond)[1], self.cond_dim, "conditioning width mismatch");

        let block = |g: &mut Graph, x: NodeId, name: &str| -> NodeId {
            let w_name = format!("{prefix}.{name}.w");
            let b_name = format!("{prefix}.{name}.b");
            let fw_name = format!("{prefix}.{name}.fw");
            let fb_name = format!("{prefix}.{name}.fb");
            let w = g.param(&w_name, store.get(&w_name).clone());
            let b = g.param(&b_name, store.get(&b_name).clone());
            let fw = g.param(&fw_name, store.get(&fw_name).clone());
            let fb = g.param(&fb_name, store.get(&fb_name).clone());
            let c_out = g.shape(w)[0];
            let seqs = g.shape(x)[0];
            let y = g.conv1d(x, w, 1);
            let y = g.add(y, b);
            let f = g.matmul(cond, fw);
            let f = g.add(f, fb);
            let gamma = g.slice_axis(f, 1, 0, c_out);
            let beta = g.slice_axis(f, 1, c_out, 2 * c_out);
            let gamma = g.reshape(gamma, &[seqs, c_out, 1]);
            let beta = g.reshape(beta, &[seqs, c_out, 1]);
            let gain = g.add_scalar(gamma, 1.0);
            let y = g.mul(y, gain);
            let y = g.add(y, beta);
            g.silu(y)
        };

        let x1 = block(g, x, "d1a");
        let x1 = block(g, x1, "d1b");
        let p1 = g.avg_pool1d(x1, 2);
        let x2 = block(g, p1, "d2a");
        let x2 = block(g, x2, "d2b");
        let p2 = g.avg_pool1d(x2, 2);
        let bn = block(g, p2, "ba");
        let bn = block(g, bn, "bb");
        let u1 = g.upsample_nearest1d(bn, 2);
        let u1 = g.concat(&[u1, x2], 1);
        let u1 = block(g, u1, "u1a");
        let u1 = block(g, u1, "u1b");
        let u2 = g.upsample_nearest1d(u1, 2);
        let u2 = g.concat(&[u2, x1], 1);
        let u2 = block(g, u2, "u2a");
        let u2 = block(g, u2, "u2b");
        let hw_name = format!("{prefix}.head.w");
        let hb_name = format!("{prefix}.head.b");
        let hw = g.param(&hw_name, store.get(&hw_name).clone());
        let hb = g.param(&hb_name, store.get(&hb_name).clone());
        let out = g.conv1d(u2, hw, 1);
        g.add(out, hb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::substream;
    use rand::Rng;

    fn spec() -> UNetSpec {
        UNetSpec { d_in: 4, widths: [6, 8, 10], cond_dim: 7 }
    }

    fn random(shape: &[usize], rng: &mut impl Rng) -> ArrayD<f64> {
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn zero_head_means_zero_output_at_init() {
        let sp = spec();
        let mut store = ParamStore::new();
        let mut rng = substream(67, "unet-zero", 0);
        sp.init_params("u", &mut store, &mut rng);
        assert_eq!(sp.param_count(), store.num_scalars());
        let mut g = Graph::new();
        let x = g.input(random(&[3, 4, 8], &mut rng));
        let c = g.input(random(&[3, 7], &mut rng));
        let y = sp.forward(&mut g, "u", &store, x, c);
        assert_eq!(g.shape(y), &[3, 4, 8]);
        assert!(g.value(y).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sequences_are_processed_independently_and_bit_exactly() {
        let sp = spec();
        let mut store = ParamStore::new();
        let mut rng = substream(67, "unet-perm", 1);
        sp.init_params("u", &mut store, &mut rng);
        for name in store.names().cloned().collect::<Vec<_>>() {
            if name.contains("head") {
                let p = store.get_mut(&name);
                let fresh = random(&p.shape().to_vec(), &mut rng);
                p.assign(&fresh);
            }
        }
        let x = random(&[5, 4, 8], &mut rng);
        let c = random(&[5, 7], &mut rng);
        let perm = [3usize, 0, 4, 1, 2];
        let mut xp = x.clone();
        let mut cp = c.clone();
        for (i, &src) in perm.iter().enumerate() {
            for ch in 0..4 {
                for t in 0..8 {
                    xp[[i, ch, t]] = x[[src, ch, t]];
                }
            }
            for d in 0..7 {
                cp[[i, d]] = c[[src, d]];
            }
        }
        let run = |xv: &ArrayD<f64>, cv: &ArrayD<f64>| -> ArrayD<f64> {
            let mut g = Graph::new();
            let xn = g.input(xv.clone());
            let cn = g.input(cv.clone());
            let y = sp.forward(&mut g, "u", &store, xn, cn);
            g.value(y).clone()
        };
        let base = run(&x, &c);
        let permuted = run(&xp, &cp);
        for (i, &src) in perm.iter().enumerate() {
            for ch in 0..4 {
                for t in 0..8 {
                    assert_eq!(
                        permuted[[i, ch, t]].to_bits(),
                        base[[src, ch, t]].to_bits(),
                        "row {i} differs from source row {src}"
                    );
                }
            }
        }
    }

    #[test]
    fn conditioning_changes_the_output() {
        let sp = spec();
        let mut store = ParamStore::new();
        let mut rng = substream(67, "unet-cond", 2);
        sp.init_params("u", &mut store, &mut rng);
        let name = "u.head.w".to_string();
        let fresh = random(&store.get(&name).shape().to_vec(), &mut rng);
        store.get_mut(&name).assign(&fresh);
        let x = random(&[1, 4, 8], &mut rng);
        let c0 = random(&[1, 7], &mut rng);
        let c1 = random(&[1, 7], &mut rng);
        let run = |cv: &ArrayD<f64>| -> ArrayD<f64> {
            let mut g = Graph::new();
            let xn = g.input(x.clone());
            let cn = g.input(cv.clone());
            let y = sp.forward(&mut g, "u", &store, xn, cn);
            g.value(y).clone()
        };
        let y0 = run(&c0);
        let y1 = run(&c1);
        let diff: f64 = y0.iter().zip(y1.iter()).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-6, "conditioning had no effect");
    }

    #[test]
    fn timestep_embedding_is_bounded_and_distinct() {
        let e0 = timestep_embedding(0);
        let e1 = timestep_embedding(1);
        let e99 = timestep_embedding(99);
        assert_eq!(e0.len(), TIME_EMB_DIM);
        for v in e0.iter().chain(e1.iter()).chain(e99.iter()) {
            assert!(v.abs() <= 1.0);
        }
        let d01: f64 = e0.iter().zip(e1.iter()).map(|(a, b)| (a - b).abs()).sum();
        let d199: f64 = e1.iter().zip(e99.iter()).map(|(a, b)| (a - b).abs()).sum();
        assert!(d01 > 1e-3 && d199 > 1e-3);
    }

    #[test]
    fn unet_gradients_match_fd_spot_checks() {
        let sp = UNetSpec { d_in: 3, widths: [4, 5, 6], cond_dim: 5 };
        let mut store = ParamStore::new();
        let mut rng = substream(67, "unet-fd", 3);
        sp.init_params("u", &mut store, &mut rng);
        let name = "u.head.w".to_string();
        let fresh = random(&store.get(&name).shape().to_vec(), &mut rng);
        store.get_mut(&name).assign(&fresh);
        let x = random(&[2, 3, 8], &mut rng);
        let c = random(&[2, 5], &mut rng);

        let loss_of = |st: &ParamStore| -> f64 {
            let mut g = Graph::new();
            let xn = g.input(x.clone());
            let cn = g.input(c.clone());
            let y = sp.forward(&mut g, "u", st, xn, cn);
            let sq = g.mul(y, y);
            let l = g.sum(sq);
            g.value(l).sum()
        };

        let mut g = Graph::new();
        let xn = g.input(x.clone());
        let cn = g.input(c.clone());
        let y = sp.forward(&mut g, "u", &store, xn, cn);
        let sq = g.mul(y, y);
        let l = g.sum(sq);
        let grads = g.backward(l);
        let by_name = g.grads_by_name(&grads);

        let mut pick = substream(67, "unet-fd-pick", 4);
        let names: Vec<String> = store.names().cloned().collect();
        for t in 0..8 {
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
