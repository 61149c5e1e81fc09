//! Reverse-mode automatic differentiation over dynamically shaped `f64` tensors.
//!
//! The graph is a define-by-run tape: every operation evaluates eagerly and
//! appends a node recording its parents, so node ids are already in
//! topological order and [`Graph::backward`] is a single reverse sweep.
//! All arrays are owned, standard-layout `ArrayD<f64>`; shape violations are
//! programmer errors and panic via `assert!` (public module APIs validate
//! their inputs before touching the graph).

mod kernels;

use ndarray::{ArrayD, Axis, Ix2, Ix3, IxDyn};

/// Handle to a node in a [`Graph`]. Only meaningful for the graph that
/// created it.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    StopGradient,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddScalar(NodeId),
    MulScalar(NodeId, f64),
    Exp(NodeId),
    Sigmoid(NodeId),
    Elu(NodeId),
    Relu(NodeId),
    Clamp(NodeId, f64, f64),
    SumAll(NodeId),
    MeanAll(NodeId),
    Reshape(NodeId),
    Permute021(NodeId),
    SoftmaxLast(NodeId),
    MatMul(NodeId, NodeId),
    AddRowVec(NodeId, NodeId),
    Bmm(NodeId, NodeId),
    ConcatChannels(Vec<NodeId>),
    BroadcastSpatial(NodeId),
    BroadcastBatch(NodeId),
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    },
    UpsampleNearest2(NodeId),
    AvgPool2(NodeId),
    MaxPool2 {
        x: NodeId,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(NodeId),
}

struct Node {
    value: ArrayD<f64>,
    grad: Option<ArrayD<f64>>,
    op: Op,
}

/// Tape of eagerly evaluated tensor operations.
pub struct Graph {
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Insert an input, parameter, or constant.
    pub fn leaf(&mut self, value: ArrayD<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &ArrayD<f64> {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` target with respect to `id`, if any
    /// path reached it.
    pub fn grad(&self, id: NodeId) -> Option<&ArrayD<f64>> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.len(), 1, "node is not a scalar");
        v.iter().next().copied().unwrap()
    }

    /// Identity on values; blocks gradient flow to the parent.
    pub fn stop_gradient(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.clone();
        self.push(v, Op::StopGradient)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(v, Op::Mul(a, b))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = &self.nodes[a.0].value + c;
        self.push(v, Op::AddScalar(a))
    }

    pub fn mul_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = &self.nodes[a.0].value * c;
        self.push(v, Op::MulScalar(a, c))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    /// Exponential linear unit with unit negative scale.
    pub fn elu(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0]
            .value
            .mapv(|x| if x > 0.0 { x } else { x.exp() - 1.0 });
        self.push(v, Op::Elu(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// Hard clamp; the subgradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        assert!(lo <= hi);
        let v = self.nodes[a.0].value.mapv(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// Sum of all elements, as a 0-d node.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a.0].value.sum();
        self.push(scalar0(s), Op::SumAll(a))
    }

    /// Mean of all elements, as a 0-d node.
    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        let m = v.sum() / v.len() as f64;
        self.push(scalar0(m), Op::MeanAll(a))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let v = &self.nodes[a.0].value;
        assert_eq!(v.len(), shape.iter().product::<usize>());
        let new = v
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape on standard-layout array");
        self.push(new, Op::Reshape(a))
    }

    /// Swap the last two axes of a 3-d tensor.
    pub fn permute021(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        assert_eq!(v.ndim(), 3);
        let p = v
            .view()
            .permuted_axes(IxDyn(&[0, 2, 1]))
            .as_standard_layout()
            .to_owned();
        self.push(p, Op::Permute021(a))
    }

    /// Row-wise softmax along the last axis.
    pub fn softmax_last(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        assert!(v.ndim() >= 1);
        let mut out = v.clone();
        let last = out.ndim() - 1;
        for mut row in out.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        let _ = last;
        self.push(out, Op::SoftmaxLast(a))
    }

    /// (M,K) x (K,N) matrix product.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = as2(&self.nodes[a.0].value);
        let bv = as2(&self.nodes[b.0].value);
        assert_eq!(av.shape()[1], bv.shape()[0]);
        let y = av.dot(&bv).into_dyn();
        self.push(y, Op::MatMul(a, b))
    }

    /// (B,F) + (F,) with the row vector broadcast over rows.
    pub fn add_rowvec(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        assert_eq!(av.ndim(), 2);
        assert_eq!(bv.ndim(), 1);
        assert_eq!(av.shape()[1], bv.shape()[0]);
        let mut y = av.clone();
        for mut row in y.rows_mut() {
            row += &bv.view();
        }
        self.push(y, Op::AddRowVec(a, b))
    }

    /// Batched matrix product: (B,M,K) x (B,K,N) -> (B,M,N).
    pub fn bmm(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = as3(&self.nodes[a.0].value);
        let bv = as3(&self.nodes[b.0].value);
        let (bs, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        assert_eq!(bs, bv.shape()[0]);
        assert_eq!(k, bv.shape()[1]);
        let n = bv.shape()[2];
        let mut y = ArrayD::zeros(IxDyn(&[bs, m, n]));
        for i in 0..bs {
            let yi = av
                .index_axis(Axis(0), i)
                .dot(&bv.index_axis(Axis(0), i));
            y.index_axis_mut(Axis(0), i).assign(&yi);
        }
        self.push(y, Op::Bmm(a, b))
    }

    /// Concatenate (B,C_i,H,W) tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let y = ndarray::concatenate(Axis(1), &views)
            .expect("concat along channels")
            .as_standard_layout()
            .to_owned();
        self.push(y, Op::ConcatChannels(parts.to_vec()))
    }

    /// (B,D) -> (B,D,h,w), repeating each entry over the spatial grid.
    pub fn broadcast_spatial(&mut self, a: NodeId, h: usize, w: usize) -> NodeId {
        let v = &self.nodes[a.0].value;
        assert_eq!(v.ndim(), 2);
        let (bs, d) = (v.shape()[0], v.shape()[1]);
        let mut y = ArrayD::zeros(IxDyn(&[bs, d, h, w]));
        for bi in 0..bs {
            for di in 0..d {
                let val = v[[bi, di]];
                y.slice_mut(ndarray::s![bi, di, .., ..]).fill(val);
            }
        }
        self.push(y, Op::BroadcastSpatial(a))
    }

    /// (C,h,w) -> (B,C,h,w), repeating over the batch axis.
    pub fn broadcast_batch(&mut self, a: NodeId, batch: usize) -> NodeId {
        let v = &self.nodes[a.0].value;
        assert_eq!(v.ndim(), 3);
        let mut shape = vec![batch];
        shape.extend_from_slice(v.shape());
        let mut y = ArrayD::zeros(IxDyn(&shape));
        for bi in 0..batch {
            y.index_axis_mut(Axis(0), bi).assign(v);
        }
        self.push(y, Op::BroadcastBatch(a))
    }

    /// 2-d convolution: x (B,Ci,H,W), w (Co,Ci,kh,kw), optional bias (Co,).
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let bv = b.map(|bi| self.nodes[bi.0].value.clone());
        let y = kernels::conv2d_forward(xv, wv, bv.as_ref(), stride, pad);
        self.push(y, Op::Conv2d { x, w, b, stride, pad })
    }

    /// Nearest-neighbour 2x spatial upsampling of (B,C,H,W).
    pub fn upsample_nearest2(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        assert_eq!(v.ndim(), 4);
        let (bs, c, h, w) = dims4(v);
        let mut y = ArrayD::zeros(IxDyn(&[bs, c, 2 * h, 2 * w]));
        for bi in 0..bs {
            for ci in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        let val = v[[bi, ci, i, j]];
                        y[[bi, ci, 2 * i, 2 * j]] = val;
                        y[[bi, ci, 2 * i, 2 * j + 1]] = val;
                        y[[bi, ci, 2 * i + 1, 2 * j]] = val;
                        y[[bi, ci, 2 * i + 1, 2 * j + 1]] = val;
                    }
                }
            }
        }
        self.push(y, Op::UpsampleNearest2(a))
    }

    /// 2x2 average pooling with stride 2. Spatial dims must be even.
    pub fn avg_pool2(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        let (bs, c, h, w) = dims4(v);
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial dims");
        let mut y = ArrayD::zeros(IxDyn(&[bs, c, h / 2, w / 2]));
        for bi in 0..bs {
            for ci in 0..c {
                for i in 0..h / 2 {
                    for j in 0..w / 2 {
                        y[[bi, ci, i, j]] = 0.25
                            * (v[[bi, ci, 2 * i, 2 * j]]
                                + v[[bi, ci, 2 * i, 2 * j + 1]]
                                + v[[bi, ci, 2 * i + 1, 2 * j]]
                                + v[[bi, ci, 2 * i + 1, 2 * j + 1]]);
                    }
                }
            }
        }
        self.push(y, Op::AvgPool2(a))
    }

    /// 2x2 max pooling with stride 2. Spatial dims must be even.
    pub fn max_pool2(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        let (bs, c, h, w) = dims4(v);
        assert!(h % 2 == 0 && w % 2 == 0, "max_pool2 needs even spatial dims");
        let mut y = ArrayD::zeros(IxDyn(&[bs, c, h / 2, w / 2]));
        let mut argmax = vec![0usize; bs * c * (h / 2) * (w / 2)];
        let strides = [c * h * w, h * w, w, 1];
        let mut out_idx = 0;
        for bi in 0..bs {
            for ci in 0..c {
                for i in 0..h / 2 {
                    for j in 0..w / 2 {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_flat = 0;
                        for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let (ii, jj) = (2 * i + di, 2 * j + dj);
                            let val = v[[bi, ci, ii, jj]];
                            if val > best {
                                best = val;
                                best_flat =
                                    bi * strides[0] + ci * strides[1] + ii * strides[2] + jj;
                            }
                        }
                        y[[bi, ci, i, j]] = best;
                        argmax[out_idx] = best_flat;
                        out_idx += 1;
                    }
                }
            }
        }
        self.push(y, Op::MaxPool2 { x: a, argmax })
    }

    /// Mean over the spatial grid: (B,C,H,W) -> (B,C).
    pub fn global_avg_pool(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        let (bs, c, h, w) = dims4(v);
        let mut y = ArrayD::zeros(IxDyn(&[bs, c]));
        for bi in 0..bs {
            for ci in 0..c {
                let mut s = 0.0;
                for i in 0..h {
                    for j in 0..w {
                        s += v[[bi, ci, i, j]];
                    }
                }
                y[[bi, ci]] = s / (h * w) as f64;
            }
        }
        self.push(y, Op::GlobalAvgPool(a))
    }

    /// Backpropagate from a scalar node, accumulating gradients into every
    /// reachable ancestor. Clears any gradients from a previous sweep.
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(
            self.nodes[loss.0].value.len(),
            1,
            "backward target must be scalar"
        );
        for n in &mut self.nodes {
            n.grad = None;
        }
        let seed = ArrayD::ones(self.nodes[loss.0].value.raw_dim());
        self.nodes[loss.0].grad = Some(seed);

        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() {
                continue;
            }
            let (parents, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let gy = node.grad.as_ref().unwrap();
            match &node.op {
                Op::Leaf | Op::StopGradient => {}
                Op::Add(a, b) => {
                    accumulate(parents, *a, gy.clone());
                    accumulate(parents, *b, gy.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(parents, *a, gy.clone());
                    accumulate(parents, *b, gy.mapv(|g| -g));
                }
                Op::Mul(a, b) => {
                    let ga = gy * &parents[b.0].value;
                    let gb = gy * &parents[a.0].value;
                    accumulate(parents, *a, ga);
                    accumulate(parents, *b, gb);
                }
                Op::AddScalar(a) => accumulate(parents, *a, gy.clone()),
                Op::MulScalar(a, c) => accumulate(parents, *a, gy * *c),
                Op::Exp(a) => {
                    let g = gy * &node.value;
                    accumulate(parents, *a, g);
                }
                Op::Sigmoid(a) => {
                    let g = gy * &node.value.mapv(|y| y * (1.0 - y));
                    accumulate(parents, *a, g);
                }
                Op::Elu(a) => {
                    let g = gy * &node.value.mapv(|y| if y > 0.0 { 1.0 } else { y + 1.0 });
                    accumulate(parents, *a, g);
                }
                Op::Relu(a) => {
                    let xv = &parents[a.0].value;
                    let g = gy * &xv.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    accumulate(parents, *a, g);
                }
                Op::Clamp(a, lo, hi) => {
                    let xv = &parents[a.0].value;
                    let mask = xv.mapv(|x| if x >= *lo && x <= *hi { 1.0 } else { 0.0 });
                    accumulate(parents, *a, gy * &mask);
                }
                Op::SumAll(a) => {
                    let g = gy.iter().next().copied().unwrap();
                    let shape = parents[a.0].value.raw_dim();
                    accumulate(parents, *a, ArrayD::from_elem(shape, g));
                }
                Op::MeanAll(a) => {
                    let n = parents[a.0].value.len() as f64;
                    let g = gy.iter().next().copied().unwrap() / n;
                    let shape = parents[a.0].value.raw_dim();
                    accumulate(parents, *a, ArrayD::from_elem(shape, g));
                }
                Op::Reshape(a) => {
                    let shape = parents[a.0].value.raw_dim();
                    let g = gy.clone().into_shape_with_order(shape).unwrap();
                    accumulate(parents, *a, g);
                }
                Op::Permute021(a) => {
                    let g = gy
                        .view()
                        .permuted_axes(IxDyn(&[0, 2, 1]))
                        .as_standard_layout()
                        .to_owned();
                    accumulate(parents, *a, g);
                }
                Op::SoftmaxLast(a) => {
                    let y = &node.value;
                    let mut g = gy.clone();
                    for (mut grow, yrow) in g.rows_mut().into_iter().zip(y.rows()) {
                        let dot: f64 = grow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum();
                        for (ge, ye) in grow.iter_mut().zip(yrow.iter()) {
                            *ge = (*ge - dot) * ye;
                        }
                    }
                    accumulate(parents, *a, g);
                }
                Op::MatMul(a, b) => {
                    let g2 = as2(gy);
                    let av = as2(&parents[a.0].value);
                    let bv = as2(&parents[b.0].value);
                    let ga = g2.dot(&bv.t()).into_dyn();
                    let gb = av.t().dot(&g2).into_dyn();
                    accumulate(parents, *a, ga);
                    accumulate(parents, *b, gb);
                }
                Op::AddRowVec(a, b) => {
                    accumulate(parents, *a, gy.clone());
                    let gb = gy.sum_axis(Axis(0));
                    accumulate(parents, *b, gb);
                }
                Op::Bmm(a, b) => {
                    let g3 = as3(gy);
                    let av = as3(&parents[a.0].value);
                    let bv = as3(&parents[b.0].value);
                    let bs = g3.shape()[0];
                    let mut ga = ArrayD::zeros(parents[a.0].value.raw_dim());
                    let mut gb = ArrayD::zeros(parents[b.0].value.raw_dim());
                    for i in 0..bs {
                        let gi = g3.index_axis(Axis(0), i);
                        let ai = av.index_axis(Axis(0), i);
                        let bi = bv.index_axis(Axis(0), i);
                        ga.index_axis_mut(Axis(0), i).assign(&gi.dot(&bi.t()));
                        gb.index_axis_mut(Axis(0), i).assign(&ai.t().dot(&gi));
                    }
                    accumulate(parents, *a, ga);
                    accumulate(parents, *b, gb);
                }
                Op::ConcatChannels(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let width = parents[p.0].value.shape()[1];
                        let g = gy
                            .slice_axis(Axis(1), ndarray::Slice::from(start..start + width))
                            .to_owned();
                        accumulate(parents, *p, g);
                        start += width;
                    }
                }
                Op::BroadcastSpatial(a) => {
                    let g = gy.sum_axis(Axis(3)).sum_axis(Axis(2));
                    accumulate(parents, *a, g);
                }
                Op::BroadcastBatch(a) => {
                    let g = gy.sum_axis(Axis(0));
                    accumulate(parents, *a, g);
                }
                Op::Conv2d { x, w, b, stride, pad } => {
                    let (gx, gw, gb) = kernels::conv2d_backward(
                        gy,
                        &parents[x.0].value,
                        &parents[w.0].value,
                        *stride,
                        *pad,
                        b.is_some(),
                    );
                    accumulate(parents, *x, gx);
                    accumulate(parents, *w, gw);
                    if let Some(bid) = b {
                        accumulate(parents, *bid, gb.unwrap());
                    }
                }
                Op::UpsampleNearest2(a) => {
                    let (bs, c, h2, w2) = dims4(gy);
                    let (h, w) = (h2 / 2, w2 / 2);
                    let mut g = ArrayD::zeros(IxDyn(&[bs, c, h, w]));
                    for bi in 0..bs {
                        for ci in 0..c {
                            for i in 0..h {
                                for j in 0..w {
                                    g[[bi, ci, i, j]] = gy[[bi, ci, 2 * i, 2 * j]]
                                        + gy[[bi, ci, 2 * i, 2 * j + 1]]
                                        + gy[[bi, ci, 2 * i + 1, 2 * j]]
                                        + gy[[bi, ci, 2 * i + 1, 2 * j + 1]];
                                }
                            }
                        }
                    }
                    accumulate(parents, *a, g);
                }
                Op::AvgPool2(a) => {
                    let (bs, c, ho, wo) = dims4(gy);
                    let mut g = ArrayD::zeros(IxDyn(&[bs, c, ho * 2, wo * 2]));
                    for bi in 0..bs {
                        for ci in 0..c {
                            for i in 0..ho {
                                for j in 0..wo {
                                    let v = 0.25 * gy[[bi, ci, i, j]];
                                    g[[bi, ci, 2 * i, 2 * j]] = v;
                                    g[[bi, ci, 2 * i, 2 * j + 1]] = v;
                                    g[[bi, ci, 2 * i + 1, 2 * j]] = v;
                                    g[[bi, ci, 2 * i + 1, 2 * j + 1]] = v;
                                }
                            }
                        }
                    }
                    accumulate(parents, *a, g);
                }
                Op::MaxPool2 { x, argmax } => {
                    let mut g = ArrayD::zeros(parents[x.0].value.raw_dim());
                    let gflat = g.as_slice_mut().unwrap();
                    for (gi, &flat) in gy.iter().zip(argmax.iter()) {
                        gflat[flat] += *gi;
                    }
                    accumulate(parents, *x, g);
                }
                Op::GlobalAvgPool(a) => {
                    let (bs, c, h, w) = dims4(&parents[a.0].value);
                    let inv = 1.0 / (h * w) as f64;
                    let mut g = ArrayD::zeros(IxDyn(&[bs, c, h, w]));
                    for bi in 0..bs {
                        for ci in 0..c {
                            let v = gy[[bi, ci]] * inv;
                            g.slice_mut(ndarray::s![bi, ci, .., ..]).fill(v);
                        }
                    }
                    accumulate(parents, *a, g);
                }
            }
        }
    }
}

fn accumulate(nodes: &mut [Node], id: NodeId, contribution: ArrayD<f64>) {
    match &mut nodes[id.0].grad {
        Some(g) => *g += &contribution,
        slot => *slot = Some(contribution),
    }
}

fn scalar0(v: f64) -> ArrayD<f64> {
    ArrayD::from_elem(IxDyn(&[]), v)
}

fn as2(v: &ArrayD<f64>) -> ndarray::ArrayView2<'_, f64> {
    v.view().into_dimensionality::<Ix2>().expect("2-d tensor")
}

fn as3(v: &ArrayD<f64>) -> ndarray::ArrayView3<'_, f64> {
    v.view().into_dimensionality::<Ix3>().expect("3-d tensor")
}

pub(crate) fn dims4(v: &ArrayD<f64>) -> (usize, usize, usize, usize) {
    assert_eq!(v.ndim(), 4, "expected 4-d tensor, got {:?}", v.shape());
    (v.shape()[0], v.shape()[1], v.shape()[2], v.shape()[3])
}

#[cfg(test)]
mod tests;
