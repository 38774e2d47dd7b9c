//! Reverse-mode autodiff over dense float64 tensors.
//!
//! Define-by-run tape: every op appends a node with an eagerly computed
//! value; node inputs always have smaller indices, so reversing the node
//! order is a topological sort for backward. Gradients accumulate
//! additively, so a parameter node used several times (shared weights)
//! collects contributions from every use.

use ndarray::{ArrayD, Axis, Ix2, IxDyn, Slice};
use std::collections::BTreeMap;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Matmul(NodeId, NodeId),
    Silu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Reshape(NodeId),
    Permute(NodeId, Vec<usize>),
    Concat(Vec<NodeId>, usize),
    SliceAxis(NodeId, usize, usize, usize),
    GatherFlat(NodeId, Arc<Vec<usize>>),
    Sum(NodeId),
    MeanAxis(NodeId, usize),
    Conv2d { x: NodeId, w: NodeId, pad: usize },
    Conv1d { x: NodeId, w: NodeId, pad: usize },
    AvgPool2d(NodeId, usize),
    AvgPool1d(NodeId, usize),
    UpsampleNearest1d(NodeId, usize),
}

struct Node {
    op: Op,
    value: ArrayD<f64>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, NodeId)>,
}

/// Sum gradient over broadcast axes until it matches `shape`.
fn unbroadcast(grad: ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    let mut g = grad;
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for ax in 0..shape.len() {
        if shape[ax] == 1 && g.shape()[ax] > 1 {
            g = g.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    g
}

fn as_2d(a: &ArrayD<f64>) -> ndarray::ArrayView2<'_, f64> {
    a.view().into_dimensionality::<Ix2>().expect("2-D tensor")
}

/// Receptive-field matrix [cin*kh*kw, b*oh*ow] for stride-1 convolution.
fn im2col(x: &ArrayD<f64>, kh: usize, kw: usize, pad_h: usize, pad_w: usize) -> ArrayD<f64> {
    let (b, cin, h, w) = {
        let s = x.shape();
        (s[0], s[1], s[2], s[3])
    };
    let oh = h + 2 * pad_h - kh + 1;
    let ow = w + 2 * pad_w - kw + 1;
    let mut cols = ArrayD::zeros(IxDyn(&[cin * kh * kw, b * oh * ow]));
    for bi in 0..b {
        for c in 0..cin {
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = (c * kh + ky) * kw + kx;
                    for oy in 0..oh {
                        let iy = oy + ky;
                        if iy < pad_h || iy >= h + pad_h {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = ox + kx;
                            if ix < pad_w || ix >= w + pad_w {
                                continue;
                            }
                            cols[[row, (bi * oh + oy) * ow + ox]] =
                                x[[bi, c, iy - pad_h, ix - pad_w]];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    gcols: &ArrayD<f64>,
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad_h: usize,
    pad_w: usize,
) -> ArrayD<f64> {
    let oh = h + 2 * pad_h - kh + 1;
    let ow = w + 2 * pad_w - kw + 1;
    let mut gx = ArrayD::zeros(IxDyn(&[b, cin, h, w]));
    for bi in 0..b {
        for c in 0..cin {
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = (c * kh + ky) * kw + kx;
                    for oy in 0..oh {
                        let iy = oy + ky;
                        if iy < pad_h || iy >= h + pad_h {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = ox + kx;
                            if ix < pad_w || ix >= w + pad_w {
                                continue;
                            }
                            gx[[bi, c, iy - pad_h, ix - pad_w]] +=
                                gcols[[row, (bi * oh + oy) * ow + ox]];
                        }
                    }
                }
            }
        }
    }
    gx
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: ArrayD<f64>) -> NodeId {
        debug_assert!(value.iter().all(|v| v.is_finite()), "non-finite value");
        // Ops like concat can hand back non-standard layouts; normalizing
        // here keeps every later reshape and slice a plain memory view.
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().to_owned()
        };
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &ArrayD<f64> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Constant leaf: participates in forward only.
    pub fn input(&mut self, value: ArrayD<f64>) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Named parameter leaf: `grads_by_name` reports its gradient.
    pub fn param(&mut self, name: &str, value: ArrayD<f64>) -> NodeId {
        let id = self.push(Op::Leaf, value);
        self.params.push((name.to_string(), id));
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = &self.nodes[a.0].value * k;
        self.push(Op::Scale(a, k), v)
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = &self.nodes[a.0].value + k;
        self.push(Op::AddScalar(a), v)
    }

    /// [m,k] x [k,n] -> [m,n].
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = as_2d(&self.nodes[a.0].value)
            .dot(&as_2d(&self.nodes[b.0].value))
            .into_dyn();
        self.push(Op::Matmul(a, b), v)
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.mapv(|x| x / (1.0 + (-x).exp()));
        self.push(Op::Silu(a), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid(a), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.mapv(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let v = self.nodes[a.0]
            .value
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("element count preserved");
        self.push(Op::Reshape(a), v)
    }

    pub fn permute(&mut self, a: NodeId, axes: &[usize]) -> NodeId {
        let v = self.nodes[a.0]
            .value
            .clone()
            .permuted_axes(IxDyn(axes))
            .as_standard_layout()
            .to_owned();
        self.push(Op::Permute(a, axes.to_vec()), v)
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> NodeId {
        let views: Vec<_> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let v = ndarray::concatenate(Axis(axis), &views).expect("concat shapes agree");
        self.push(Op::Concat(parts.to_vec(), axis), v)
    }

    pub fn slice_axis(&mut self, a: NodeId, axis: usize, start: usize, end: usize) -> NodeId {
        let v = self.nodes[a.0]
            .value
            .slice_axis(Axis(axis), Slice::from(start..end))
            .to_owned();
        self.push(Op::SliceAxis(a, axis, start, end), v)
    }

    /// out.flat[i] = a.flat[indices[i]], reshaped to `shape`. Backward
    /// scatter-adds, so repeated indices share one source weight.
    pub fn gather_flat(&mut self, a: NodeId, indices: Arc<Vec<usize>>, shape: &[usize]) -> NodeId {
        let src = self.nodes[a.0]
            .value
            .as_standard_layout()
            .to_owned()
            .into_raw_vec_and_offset()
            .0;
        let data: Vec<f64> = indices.iter().map(|&i| src[i]).collect();
        let v = ArrayD::from_shape_vec(IxDyn(shape), data).expect("index count matches shape");
        self.push(Op::GatherFlat(a, indices), v)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = ndarray::arr0(self.nodes[a.0].value.sum()).into_dyn();
        self.push(Op::Sum(a), v)
    }

    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> NodeId {
        let v = self.nodes[a.0].value.mean_axis(Axis(axis)).expect("nonempty axis");
        self.push(Op::MeanAxis(a, axis), v)
    }

    /// Stride-1 cross-correlation, zero padding. x [b,cin,h,w], w [cout,cin,kh,kw].
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, pad: usize) -> NodeId {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        assert_eq!(xs[1], ws[1], "channel mismatch");
        let (b, h, wd) = (xs[0], xs[2], xs[3]);
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        let oh = h + 2 * pad - kh + 1;
        let ow = wd + 2 * pad - kw + 1;
        let cols = im2col(&self.nodes[x.0].value, kh, kw, pad, pad);
        let wflat = self.nodes[w.0]
            .value
            .clone()
            .into_shape_with_order(IxDyn(&[cout, ws[1] * kh * kw]))
            .unwrap();
        let out = as_2d(&wflat).dot(&as_2d(&cols));
        let mut v = ArrayD::zeros(IxDyn(&[b, cout, oh, ow]));
        for bi in 0..b {
            for c in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        v[[bi, c, oy, ox]] = out[[c, (bi * oh + oy) * ow + ox]];
                    }
                }
            }
        }
        self.push(Op::Conv2d { x, w, pad }, v)
    }

    /// Stride-1 cross-correlation, zero padding. x [b,cin,t], w [cout,cin,k].
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, pad: usize) -> NodeId {
        let x3 = self.nodes[x.0].value.clone();
        let w3 = self.nodes[w.0].value.clone();
        let (b, cin, t) = (x3.shape()[0], x3.shape()[1], x3.shape()[2]);
        let (cout, k) = (w3.shape()[0], w3.shape()[2]);
        assert_eq!(cin, w3.shape()[1], "channel mismatch");
        let x4 = x3.into_shape_with_order(IxDyn(&[b, cin, 1, t])).unwrap();
        let w4 = w3.into_shape_with_order(IxDyn(&[cout, cin, 1, k])).unwrap();
        let cols = im2col(&x4, 1, k, 0, pad);
        let wflat = w4.into_shape_with_order(IxDyn(&[cout, cin * k])).unwrap();
        let ot = t + 2 * pad - k + 1;
        let out = as_2d(&wflat).dot(&as_2d(&cols));
        let mut v = ArrayD::zeros(IxDyn(&[b, cout, ot]));
        for bi in 0..b {
            for c in 0..cout {
                for i in 0..ot {
                    v[[bi, c, i]] = out[[c, bi * ot + i]];
                }
            }
        }
        self.push(Op::Conv1d { x, w, pad }, v)
    }

    pub fn avg_pool2d(&mut self, a: NodeId, k: usize) -> NodeId {
        let x = &self.nodes[a.0].value;
        let s = x.shape().to_vec();
        assert!(s[2] % k == 0 && s[3] % k == 0, "pool must tile");
        let (oh, ow) = (s[2] / k, s[3] / k);
        let mut v = ArrayD::zeros(IxDyn(&[s[0], s[1], oh, ow]));
        let norm = 1.0 / (k * k) as f64;
        for bi in 0..s[0] {
            for c in 0..s[1] {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for dy in 0..k {
                            for dx in 0..k {
                                acc += x[[bi, c, oy * k + dy, ox * k + dx]];
                            }
                        }
                        v[[bi, c, oy, ox]] = acc * norm;
                    }
                }
            }
        }
        self.push(Op::AvgPool2d(a, k), v)
    }

    pub fn avg_pool1d(&mut self, a: NodeId, k: usize) -> NodeId {
        let x = &self.nodes[a.0].value;
        let s = x.shape().to_vec();
        assert!(s[2] % k == 0, "pool must tile");
        let ot = s[2] / k;
        let mut v = ArrayD::zeros(IxDyn(&[s[0], s[1], ot]));
        let norm = 1.0 / k as f64;
        for bi in 0..s[0] {
            for c in 0..s[1] {
                for i in 0..ot {
                    let mut acc = 0.0;
                    for d in 0..k {
                        acc += x[[bi, c, i * k + d]];
                    }
                    v[[bi, c, i]] = acc * norm;
                }
            }
        }
        self.push(Op::AvgPool1d(a, k), v)
    }

    pub fn upsample_nearest1d(&mut self, a: NodeId, k: usize) -> NodeId {
        let x = &self.nodes[a.0].value;
        let s = x.shape().to_vec();
        let mut v = ArrayD::zeros(IxDyn(&[s[0], s[1], s[2] * k]));
        for bi in 0..s[0] {
            for c in 0..s[1] {
                for i in 0..s[2] {
                    for d in 0..k {
                        v[[bi, c, i * k + d]] = x[[bi, c, i]];
                    }
                }
            }
        }
        self.push(Op::UpsampleNearest1d(a, k), v)
    }

    /// Reverse accumulation from a scalar loss. Returns one gradient slot
    /// per node; unreachable nodes hold None.
    pub fn backward(&self, loss: NodeId) -> Vec<Option<ArrayD<f64>>> {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "loss must be scalar");
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(ArrayD::ones(self.nodes[loss.0].value.raw_dim()));
        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads
    }

    fn acc_into(slot: &mut Option<ArrayD<f64>>, contrib: ArrayD<f64>) {
        match slot {
            Some(g) => *g += &contrib,
            None => *slot = Some(contrib),
        }
    }

    fn accumulate(&self, i: usize, g: &ArrayD<f64>, grads: &mut Vec<Option<ArrayD<f64>>>) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                Self::acc_into(&mut grads[a.0], unbroadcast(g.clone(), self.shape(*a)));
                Self::acc_into(&mut grads[b.0], unbroadcast(g.clone(), self.shape(*b)));
            }
            Op::Sub(a, b) => {
                Self::acc_into(&mut grads[a.0], unbroadcast(g.clone(), self.shape(*a)));
                Self::acc_into(&mut grads[b.0], unbroadcast(-g.clone(), self.shape(*b)));
            }
            Op::Mul(a, b) => {
                let ga = g * &self.nodes[b.0].value;
                let gb = g * &self.nodes[a.0].value;
                Self::acc_into(&mut grads[a.0], unbroadcast(ga, self.shape(*a)));
                Self::acc_into(&mut grads[b.0], unbroadcast(gb, self.shape(*b)));
            }
            Op::Scale(a, k) => Self::acc_into(&mut grads[a.0], g * *k),
            Op::AddScalar(a) => Self::acc_into(&mut grads[a.0], g.clone()),
            Op::Matmul(a, b) => {
                let ga = as_2d(g).dot(&as_2d(&self.nodes[b.0].value).t()).into_dyn();
                let gb = as_2d(&self.nodes[a.0].value).t().dot(&as_2d(g)).into_dyn();
                Self::acc_into(&mut grads[a.0], ga);
                Self::acc_into(&mut grads[b.0], gb);
            }
            Op::Silu(a) => {
                let ga = ndarray::Zip::from(g)
                    .and(&self.nodes[a.0].value)
                    .map_collect(|&gv, &x| {
                        let s = 1.0 / (1.0 + (-x).exp());
                        gv * s * (1.0 + x * (1.0 - s))
                    });
                Self::acc_into(&mut grads[a.0], ga);
            }
            Op::Sigmoid(a) => {
                let ga = ndarray::Zip::from(g)
                    .and(&self.nodes[i].value)
                    .map_collect(|&gv, &y| gv * y * (1.0 - y));
                Self::acc_into(&mut grads[a.0], ga);
            }
            Op::Tanh(a) => {
                let ga = ndarray::Zip::from(g)
                    .and(&self.nodes[i].value)
                    .map_collect(|&gv, &y| gv * (1.0 - y * y));
                Self::acc_into(&mut grads[a.0], ga);
            }
            Op::Reshape(a) => {
                let ga = g
                    .as_standard_layout()
                    .to_owned()
                    .into_shape_with_order(IxDyn(self.shape(*a)))
                    .expect("reshape grad");
                Self::acc_into(&mut grads[a.0], ga);
            }
            Op::Permute(a, axes) => {
                let mut inv = vec![0usize; axes.len()];
                for (new_ax, &old_ax) in axes.iter().enumerate() {
                    inv[old_ax] = new_ax;
                }
                let ga = g
                    .clone()
                    .permuted_axes(IxDyn(&inv))
                    .as_standard_layout()
                    .to_owned();
                Self::acc_into(&mut grads[a.0], ga);
            }
            Op::Concat(parts, axis) => {
                let mut start = 0;
                for p in parts {
                    let len = self.shape(*p)[*axis];
                    let gp = g
                        .slice_axis(Axis(*axis), Slice::from(start..start + len))
                        .to_owned();
                    Self::acc_into(&mut grads[p.0], gp);
                    start += len;
                }
            }
            Op::SliceAxis(a, axis, start, end) => {
                let mut ga = ArrayD::zeros(IxDyn(self.shape(*a)));
                ga.slice_axis_mut(Axis(*axis), Slice::from(*start..*end))
                    .assign(g);
                Self::acc_into(&mut grads[a.0], ga);
            }
            Op::GatherFlat(a, indices) => {
                let mut ga = vec![0.0; self.nodes[a.0].value.len()];
                let gflat = g.as_standard_layout();
                for (k, &src) in indices.iter().enumerate() {
                    ga[src] += gflat.as_slice().unwrap()[k];
                }
                let ga = ArrayD::from_shape_vec(IxDyn(self.shape(*a)), ga).unwrap();
                Self::acc_into(&mut grads[a.0], ga);
            }
            Op::Sum(a) => {
                let ga = ArrayD::from_elem(IxDyn(self.shape(*a)), g.iter().sum::<f64>());
                Self::acc_into(&mut grads[a.0], ga);
            }
            Op::MeanAxis(a, axis) => {
                let n = self.shape(*a)[*axis];
                let spread = g
                    .clone()
                    .insert_axis(Axis(*axis))
                    .broadcast(IxDyn(self.shape(*a)))
                    .expect("broadcast grad")
                    .to_owned()
                    / n as f64;
                Self::acc_into(&mut grads[a.0], spread);
            }
            Op::Conv2d { x, w, pad } => {
                let xs = self.shape(*x).to_vec();
                let ws = self.shape(*w).to_vec();
                let (b, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
                let oh = h + 2 * pad - kh + 1;
                let ow = wd + 2 * pad - kw + 1;
                let mut gflat = ArrayD::zeros(IxDyn(&[cout, b * oh * ow]));
                for bi in 0..b {
                    for c in 0..cout {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                gflat[[c, (bi * oh + oy) * ow + ox]] = g[[bi, c, oy, ox]];
                            }
                        }
                    }
                }
                let cols = im2col(&self.nodes[x.0].value, kh, kw, *pad, *pad);
                let gw = as_2d(&gflat).dot(&as_2d(&cols).t());
                let gw = gw.into_dyn().into_shape_with_order(IxDyn(&ws)).unwrap();
                let wflat = self.nodes[w.0]
                    .value
                    .clone()
                    .into_shape_with_order(IxDyn(&[cout, cin * kh * kw]))
                    .unwrap();
                let gcols = as_2d(&wflat).t().dot(&as_2d(&gflat)).into_dyn();
                let gx = col2im(&gcols, b, cin, h, wd, kh, kw, *pad, *pad);
                Self::acc_into(&mut grads[x.0], gx);
                Self::acc_into(&mut grads[w.0], gw);
            }
            Op::Conv1d { x, w, pad } => {
                let xs = self.shape(*x).to_vec();
                let ws = self.shape(*w).to_vec();
                let (b, cin, t) = (xs[0], xs[1], xs[2]);
                let (cout, k) = (ws[0], ws[2]);
                let ot = t + 2 * pad - k + 1;
                let mut gflat = ArrayD::zeros(IxDyn(&[cout, b * ot]));
                for bi in 0..b {
                    for c in 0..cout {
                        for i in 0..ot {
                            gflat[[c, bi * ot + i]] = g[[bi, c, i]];
                        }
                    }
                }
                let x4 = self.nodes[x.0]
                    .value
                    .clone()
                    .into_shape_with_order(IxDyn(&[b, cin, 1, t]))
                    .unwrap();
                let cols = im2col(&x4, 1, k, 0, *pad);
                let gw = as_2d(&gflat).dot(&as_2d(&cols).t());
                let gw = gw.into_dyn().into_shape_with_order(IxDyn(&ws)).unwrap();
                let wflat = self.nodes[w.0]
                    .value
                    .clone()
                    .into_shape_with_order(IxDyn(&[cout, cin * k]))
                    .unwrap();
                let gcols = as_2d(&wflat).t().dot(&as_2d(&gflat)).into_dyn();
                let gx4 = col2im(&gcols, b, cin, 1, t, 1, k, 0, *pad);
                let gx = gx4.into_shape_with_order(IxDyn(&[b, cin, t])).unwrap();
                Self::acc_into(&mut grads[x.0], gx);
                Self::acc_into(&mut grads[w.0], gw);
            }
            Op::AvgPool2d(a, k) => {
                let s = self.shape(*a).to_vec();
                let mut ga = ArrayD::zeros(IxDyn(&s));
                let norm = 1.0 / (k * k) as f64;
                for bi in 0..s[0] {
                    for c in 0..s[1] {
                        for oy in 0..s[2] / k {
                            for ox in 0..s[3] / k {
                                let gv = g[[bi, c, oy, ox]] * norm;
                                for dy in 0..*k {
                                    for dx in 0..*k {
                                        ga[[bi, c, oy * k + dy, ox * k + dx]] = gv;
                                    }
                                }
                            }
                        }
                    }
                }
                Self::acc_into(&mut grads[a.0], ga);
            }
            Op::AvgPool1d(a, k) => {
                let s = self.shape(*a).to_vec();
                let mut ga = ArrayD::zeros(IxDyn(&s));
                let norm = 1.0 / *k as f64;
                for bi in 0..s[0] {
                    for c in 0..s[1] {
                        for i in 0..s[2] / k {
                            let gv = g[[bi, c, i]] * norm;
                            for d in 0..*k {
                                ga[[bi, c, i * k + d]] = gv;
                            }
                        }
                    }
                }
                Self::acc_into(&mut grads[a.0], ga);
            }
            Op::UpsampleNearest1d(a, k) => {
                let s = self.shape(*a).to_vec();
                let mut ga = ArrayD::zeros(IxDyn(&s));
                for bi in 0..s[0] {
                    for c in 0..s[1] {
                        for i in 0..s[2] {
                            let mut acc = 0.0;
                            for d in 0..*k {
                                acc += g[[bi, c, i * k + d]];
                            }
                            ga[[bi, c, i]] = acc;
                        }
                    }
                }
                Self::acc_into(&mut grads[a.0], ga);
            }
        }
    }

    /// Gradients summed per parameter name (shared weights accumulate).
    /// Parameters unreachable from the loss report zero gradients.
    pub fn grads_by_name(
        &self,
        grads: &[Option<ArrayD<f64>>],
    ) -> BTreeMap<String, ArrayD<f64>> {
        let mut out: BTreeMap<String, ArrayD<f64>> = BTreeMap::new();
        for (name, id) in &self.params {
            let g = grads[id.0]
                .clone()
                .unwrap_or_else(|| ArrayD::zeros(self.nodes[id.0].value.raw_dim()));
            out.entry(name.clone())
                .and_modify(|acc| *acc += &g)
                .or_insert(g);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::substream;
    use ndarray::{ArrayD, IxDyn};
    use rand::Rng;

    fn randn(shape: &[usize], idx: u64) -> ArrayD<f64> {
        let mut rng = substream(41, "graph-test", idx);
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-1.0..1.0))
    }

    /// Central finite differences of a scalar builder against one input
    /// tensor, compared entry by entry.
    fn check_grad<F>(build: F, x0: ArrayD<f64>, tol: f64)
    where
        F: Fn(&mut Graph, NodeId) -> NodeId,
    {
        let mut g = Graph::new();
        let x = g.param("x", x0.clone());
        let loss = build(&mut g, x);
        let grads = g.backward(loss);
        let analytic = grads[x.0].clone().unwrap_or_else(|| ArrayD::zeros(x0.raw_dim()));
        let eps = 1e-5;
        for k in 0..x0.len() {
            let mut plus = x0.clone();
            let mut minus = x0.clone();
            plus.as_slice_mut().unwrap()[k] += eps;
            minus.as_slice_mut().unwrap()[k] -= eps;
            let mut gp = Graph::new();
            let xp = gp.input(plus);
            let lp = build(&mut gp, xp);
            let mut gm = Graph::new();
            let xm = gm.input(minus);
            let lm = build(&mut gm, xm);
            let fd = (gp.value(lp).sum() - gm.value(lm).sum()) / (2.0 * eps);
            let an = analytic.as_slice().unwrap()[k];
            let denom = fd.abs().max(an.abs()).max(1e-8);
            assert!(
                (fd - an).abs() / denom < tol,
                "entry {k}: analytic {an:.8e} vs fd {fd:.8e}"
            );
        }
        // build once more to ensure backward() left values untouched
        let _ = g.value(loss);
    }

    #[test]
    fn sum_of_squares_gradient_is_2x() {
        let x0 = randn(&[3, 4], 0);
        let mut g = Graph::new();
        let x = g.param("x", x0.clone());
        let sq = g.mul(x, x);
        let loss = g.sum(sq);
        let grads = g.backward(loss);
        let gx = grads[x.0].as_ref().unwrap();
        for (a, b) in gx.iter().zip(x0.iter()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn rotated_least_squares_gradient_matches_closed_form() {
        // loss = |R p - t|^2 with fixed orthogonal R: grad = 2 R^T (R p - t).
        let r = crate::so3::Rotation::from_axis_angle([0.3, -0.5, 0.8], 1.1)
            .unwrap()
            .to_matrix();
        let rm = ArrayD::from_shape_fn(IxDyn(&[3, 3]), |ix| r[ix[0]][ix[1]]);
        let p0 = randn(&[3, 1], 1);
        let t0 = randn(&[3, 1], 2);
        let mut g = Graph::new();
        let p = g.param("p", p0.clone());
        let rn = g.input(rm.clone());
        let t = g.input(t0.clone());
        let rp = g.matmul(rn, p);
        let d = g.sub(rp, t);
        let sq = g.mul(d, d);
        let loss = g.sum(sq);
        let grads = g.backward(loss);
        let gp = grads[p.0].as_ref().unwrap();
        for i in 0..3 {
            let mut want = 0.0;
            for j in 0..3 {
                let mut rpj = 0.0;
                for k in 0..3 {
                    rpj += r[j][k] * p0[[k, 0]];
                }
                want += 2.0 * r[j][i] * (rpj - t0[[j, 0]]);
            }
            assert!((gp[[i, 0]] - want).abs() < 1e-12, "row {i}");
        }
    }

    #[test]
    fn broadcast_add_mul_gradients_match_fd() {
        let y0 = randn(&[1, 4], 10);
        check_grad(
            move |g, x| {
                let y = g.input(y0.clone());
                let s = g.add(x, y);
                let m = g.mul(s, y);
                let act = g.silu(m);
                g.sum(act)
            },
            randn(&[3, 4], 11),
            1e-6,
        );
    }

    #[test]
    fn matmul_chain_gradients_match_fd() {
        let w0 = randn(&[4, 5], 20);
        check_grad(
            move |g, x| {
                let w = g.input(w0.clone());
                let y = g.matmul(x, w);
                let t = g.tanh(y);
                let sq = g.mul(t, t);
                g.sum(sq)
            },
            randn(&[2, 4], 21),
            1e-6,
        );
    }

    #[test]
    fn conv2d_gradients_match_fd_both_args() {
        let x0 = randn(&[2, 3, 5, 5], 30);
        let w0 = randn(&[4, 3, 3, 3], 31);
        let xc = x0.clone();
        check_grad(
            move |g, w| {
                let x = g.input(xc.clone());
                let y = g.conv2d(x, w, 1);
                let a = g.silu(y);
                g.sum(a)
            },
            w0.clone(),
            1e-5,
        );
        let wc = w0;
        check_grad(
            move |g, x| {
                let w = g.input(wc.clone());
                let y = g.conv2d(x, w, 1);
                let a = g.silu(y);
                g.sum(a)
            },
            x0,
            1e-5,
        );
    }

    #[test]
    fn conv1d_pool_upsample_gradients_match_fd() {
        let w0 = randn(&[4, 2, 3], 40);
        check_grad(
            move |g, x| {
                let w = g.input(w0.clone());
                let y = g.conv1d(x, w, 1);
                let p = g.avg_pool1d(y, 2);
                let u = g.upsample_nearest1d(p, 2);
                let a = g.tanh(u);
                g.sum(a)
            },
            randn(&[2, 2, 8], 41),
            1e-6,
        );
    }

    #[test]
    fn pool2d_mean_axis_gradients_match_fd() {
        check_grad(
            move |g, x| {
                let p = g.avg_pool2d(x, 2);
                let m = g.mean_axis(p, 1);
                let s = g.sigmoid(m);
                g.sum(s)
            },
            randn(&[2, 4, 4, 4], 50),
            1e-6,
        );
    }

    #[test]
    fn reshape_permute_concat_slice_gradients_match_fd() {
        check_grad(
            move |g, x| {
                let r = g.reshape(x, &[4, 6]);
                let p = g.permute(r, &[1, 0]);
                let a = g.slice_axis(p, 0, 0, 3);
                let b = g.slice_axis(p, 0, 3, 6);
                let c = g.concat(&[a, b], 1);
                let t = g.silu(c);
                g.sum(t)
            },
            randn(&[2, 3, 4], 60),
            1e-6,
        );
    }

    #[test]
    fn gather_flat_scatter_adds_repeated_indices() {
        let idx = Arc::new(vec![0usize, 2, 2, 1]);
        let ic = idx.clone();
        check_grad(
            move |g, x| {
                let y = g.gather_flat(x, ic.clone(), &[4]);
                let sq = g.mul(y, y);
                g.sum(sq)
            },
            randn(&[3], 70),
            1e-6,
        );
        // direct check of the accumulation
        let mut g = Graph::new();
        let x = g.param("x", ArrayD::from_shape_vec(IxDyn(&[3]), vec![1.0, 2.0, 3.0]).unwrap());
        let y = g.gather_flat(x, idx, &[4]);
        let loss = g.sum(y);
        let grads = g.backward(loss);
        let gx = grads[x.0].as_ref().unwrap();
        assert_eq!(gx.as_slice().unwrap(), &[1.0, 1.0, 2.0]);
    }

    #[test]
    fn disconnected_parameter_reports_zero_gradient() {
        let mut g = Graph::new();
        let _unused = g.param("unused", randn(&[2, 2], 80));
        let x = g.param("x", randn(&[2, 2], 81));
        let sq = g.mul(x, x);
        let loss = g.sum(sq);
        let grads = g.backward(loss);
        let by_name = g.grads_by_name(&grads);
        assert!(by_name["unused"].iter().all(|&v| v == 0.0));
        assert!(by_name["x"].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn shared_parameter_accumulates_both_uses() {
        // loss = sum((x + x)^2) = 4 sum(x^2), grad = 8x.
        let x0 = randn(&[3], 90);
        let mut g = Graph::new();
        let x = g.param("x", x0.clone());
        let two_x = g.add(x, x);
        let sq = g.mul(two_x, two_x);
        let loss = g.sum(sq);
        let grads = g.backward(loss);
        let gx = grads[x.0].as_ref().unwrap();
        for (a, b) in gx.iter().zip(x0.iter()) {
            assert!((a - 8.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    #[should_panic(expected = "loss must be scalar")]
    fn vector_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.input(randn(&[3], 95));
        let _ = g.backward(x);
    }
}
