//! Image encoders: a C8 rotation-equivariant stack and a plain twin.
//!
//! Equivariant convolutions share one base filter across 8 orientations.
//! A 3x3 kernel rotates by 45 degrees as a cyclic shift of its outer ring,
//! so two shifts are exactly the 90-degree array rotation; with reflect
//! padding the whole stack then commutes exactly with quarter-turn input
//! rotations, and group pooling (mean over orientations) makes the output
//! channels plain scalar fields. A constant image stays constant through
//! every layer because reflect padding adds no border seam.

use super::graph::{Graph, NodeId};
use super::params::{init_kaiming, ParamStore};
use rand::Rng;
use std::sync::Arc;

/// Flat 3x3 indices of the outer ring, in rotation order.
const RING: [usize; 8] = [0, 1, 2, 5, 8, 7, 6, 3];

/// Flat index map applying r steps of 45-degree kernel rotation:
/// out[cell] = in[map[cell]].
fn rot45_map(r: usize) -> [usize; 9] {
    let mut map = [4usize; 9];
    for q in 0..8 {
        map[RING[q]] = RING[(q + r) % 8];
    }
    map
}

/// Gather table expanding a lift kernel [n, cin, 3, 3] to all 8
/// orientations [8*n, cin, 3, 3].
fn lift_expand_indices(n: usize, cin: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(8 * n * cin * 9);
    for r in 0..8 {
        let map = rot45_map(r);
        for o in 0..n {
            for i in 0..cin {
                for cell in 0..9 {
                    idx.push((o * cin + i) * 9 + map[cell]);
                }
            }
        }
    }
    idx
}

/// Gather table expanding a regular-to-regular kernel [n_out, 8, n_in, 3, 3]
/// to [8*n_out, 8*n_in, 3, 3]: orientation r rotates the kernel and shifts
/// the input-orientation index, expanded[r][o][s][m] = rot_r(base[o][s-r][m]).
fn regular_expand_indices(n_out: usize, n_in: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(64 * n_out * n_in * 9);
    for r in 0..8 {
        let map = rot45_map(r);
        for o in 0..n_out {
            for s in 0..8 {
                let s_base = (s + 8 - r) % 8;
                for m in 0..n_in {
                    for cell in 0..9 {
                        idx.push(((o * 8 + s_base) * n_in + m) * 9 + map[cell]);
                    }
                }
            }
        }
    }
    idx
}

/// Reflect-pad both spatial axes by 1 (no edge repeat), as a gather.
fn reflect_pad2d(g: &mut Graph, x: NodeId) -> NodeId {
    let s = g.shape(x).to_vec();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let reflect = |i: isize, n: usize| -> usize {
        if i < 0 {
            (-i) as usize
        } else if i as usize >= n {
            2 * n - 2 - i as usize
        } else {
            i as usize
        }
    };
    let mut idx = Vec::with_capacity(b * c * (h + 2) * (w + 2));
    for bi in 0..b {
        for ci in 0..c {
            for y in -1..=(h as isize) {
                for xx in -1..=(w as isize) {
                    let sy = reflect(y, h);
                    let sx = reflect(xx, w);
                    idx.push(((bi * c + ci) * h + sy) * w + sx);
                }
            }
        }
    }
    g.gather_flat(x, Arc::new(idx), &[b, c, h + 2, w + 2])
}

/// Broadcast a per-copy bias [n] to all orientations as [1, 8n, 1, 1].
fn orientation_bias(g: &mut Graph, bias: NodeId, n: usize) -> NodeId {
    let idx: Vec<usize> = (0..8 * n).map(|ch| ch % n).collect();
    g.gather_flat(bias, Arc::new(idx), &[1, 8 * n, 1, 1])
}

/// Shared shape of both encoder variants. Channel multiplicities are per
/// orientation in the equivariant case; the plain variant uses the same
/// total widths unconstrained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderSpec {
    pub in_ch: usize,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub n_out: usize,
    pub equivariant: bool,
}

impl EncoderSpec {
    /// Output channel count of the feature map.
    pub fn out_channels(&self) -> usize {
        self.n_out
    }

    /// Spatial side length of the output for a square input.
    pub fn out_hw(&self, in_hw: usize) -> usize {
        in_hw / 4
    }

    pub fn init_params<R: Rng>(&self, prefix: &str, store: &mut ParamStore, rng: &mut R) {
        let e = self.equivariant;
        let (c1, c2, c3) = if e {
            (self.n1, self.n2, self.n3)
        } else {
            (8 * self.n1, 8 * self.n2, 8 * self.n3)
        };
        if e {
            store.insert(
                &format!("{prefix}.conv1.w"),
                init_kaiming(&[c1, self.in_ch, 3, 3], self.in_ch * 9, rng),
            );
            store.insert(
                &format!("{prefix}.conv2.w"),
                init_kaiming(&[c2, 8, self.n1, 3, 3], 8 * self.n1 * 9, rng),
            );
            store.insert(
                &format!("{prefix}.conv3.w"),
                init_kaiming(&[c3, 8, self.n2, 3, 3], 8 * self.n2 * 9, rng),
            );
        } else {
            store.insert(
                &format!("{prefix}.conv1.w"),
                init_kaiming(&[c1, self.in_ch, 3, 3], self.in_ch * 9, rng),
            );
            store.insert(
                &format!("{prefix}.conv2.w"),
                init_kaiming(&[c2, 8 * self.n1, 3, 3], 8 * self.n1 * 9, rng),
            );
            store.insert(
                &format!("{prefix}.conv3.w"),
                init_kaiming(&[c3, 8 * self.n2, 3, 3], 8 * self.n2 * 9, rng),
            );
        }
        store.insert(&format!("{prefix}.conv1.b"), ndarray::ArrayD::zeros(ndarray::IxDyn(&[c1])));
        store.insert(&format!("{prefix}.conv2.b"), ndarray::ArrayD::zeros(ndarray::IxDyn(&[c2])));
        store.insert(&format!("{prefix}.conv3.b"), ndarray::ArrayD::zeros(ndarray::IxDyn(&[c3])));
        store.insert(
            &format!("{prefix}.head.w"),
            init_kaiming(&[self.n_out, self.n3, 1, 1], self.n3, rng),
        );
        store.insert(
            &format!("{prefix}.head.b"),
            ndarray::ArrayD::zeros(ndarray::IxDyn(&[self.n_out])),
        );
    }

    /// image [b, in_ch, h, w] -> feature map [b, n_out, h/4, w/4].
    pub fn forward(
        &self,
        g: &mut Graph,
        prefix: &str,
        store: &ParamStore,
        image: NodeId,
    ) -> NodeId {
        let s = g.shape(image).to_vec();
        assert_eq!(s[2], s[3], "encoder expects a square image");
        assert_eq!(s[2] % 4, 0, "side must divide by 4 for two pools");
        assert!(s[2] >= 8, "side must be at least 8 so pooled maps stay reflectable");
        let bind = |g: &mut Graph, name: &str| {
            let full = format!("{prefix}.{name}");
            g.param(&full, store.get(&full).clone())
        };

        let conv = |g: &mut Graph, x: NodeId, w: NodeId, bias: NodeId| {
            let padded = reflect_pad2d(g, x);
            let y = g.conv2d(padded, w, 0);
            g.add(y, bias)
        };

        let (w1, b1, w2, b2, w3, b3) = (
            bind(g, "conv1.w"),
            bind(g, "conv1.b"),
            bind(g, "conv2.w"),
            bind(g, "conv2.b"),
            bind(g, "conv3.w"),
            bind(g, "conv3.b"),
        );
        let (w1, b1, w2, b2, w3, b3) = if self.equivariant {
            let e1 = g.gather_flat(
                w1,
                Arc::new(lift_expand_indices(self.n1, self.in_ch)),
                &[8 * self.n1, self.in_ch, 3, 3],
            );
            let e2 = g.gather_flat(
                w2,
                Arc::new(regular_expand_indices(self.n2, self.n1)),
                &[8 * self.n2, 8 * self.n1, 3, 3],
            );
            let e3 = g.gather_flat(
                w3,
                Arc::new(regular_expand_indices(self.n3, self.n2)),
                &[8 * self.n3, 8 * self.n2, 3, 3],
            );
            (
                e1,
                orientation_bias(g, b1, self.n1),
                e2,
                orientation_bias(g, b2, self.n2),
                e3,
                orientation_bias(g, b3, self.n3),
            )
        } else {
            let as_bias = |g: &mut Graph, b: NodeId, n: usize| g.reshape(b, &[1, n, 1, 1]);
            let (v1, v2, v3) = (
                as_bias(g, b1, 8 * self.n1),
                as_bias(g, b2, 8 * self.n2),
                as_bias(g, b3, 8 * self.n3),
            );
            (w1, v1, w2, v2, w3, v3)
        };

        let x = conv(g, image, w1, b1);
        let x = g.silu(x);
        let x = g.avg_pool2d(x, 2);
        let x = conv(g, x, w2, b2);
        let x = g.silu(x);
        let x = g.avg_pool2d(x, 2);
        let x = conv(g, x, w3, b3);
        let x = g.silu(x);

        // orientation pool to scalar fields, then pointwise head
        let sp = g.shape(x).to_vec();
        let grouped = g.reshape(x, &[sp[0], 8, self.n3, sp[2], sp[3]]);
        let pooled = g.mean_axis(grouped, 1);
        let hw = bind(g, "head.w");
        let hb = bind(g, "head.b");
        let hb = g.reshape(hb, &[1, self.n_out, 1, 1]);
        let y = g.conv2d(pooled, hw, 0);
        let y = g.add(y, hb);
        g.silu(y)
    }

    pub fn param_count(&self) -> usize {
        let (c1, c2, c3) = if self.equivariant {
            (self.n1, self.n2, self.n3)
        } else {
            (8 * self.n1, 8 * self.n2, 8 * self.n3)
        };
        let k1 = c1 * self.in_ch * 9;
        let k2 = c2 * 8 * self.n1 * 9;
        let k3 = c3 * 8 * self.n2 * 9;
        k1 + k2 + k3 + c1 + c2 + c3 + self.n_out * self.n3 + self.n_out
    }
}
