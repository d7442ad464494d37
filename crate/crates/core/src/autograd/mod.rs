//! Reverse-mode automatic differentiation over an arena graph.
//!
//! Nodes are appended to a `Graph` with eagerly computed values; parents
//! always precede children, so arena order is a topological order. A
//! backward pass builds the gradient computation *as new graph nodes*
//! (`backward_nodes` / `grad_as_node`), which makes gradients themselves
//! differentiable — the mechanism behind the matching loss meta-gradient.
//! `backward` is the plain variant that returns gradient values.
//!
//! The primitive set is closed under differentiation: every backward rule
//! is expressed with primitives from the same set, so second-order
//! gradients need no extra machinery. One graph serves one optimization
//! step and is dropped afterwards.

mod backward;
pub mod kernels;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeafKind {
    Parameter,
    Data,
    Constant,
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf(LeafKind),
    /// Forward identity; the node's accumulated adjoint observes the
    /// gradient at this point of the graph (used for frame probes).
    Identity,
    Add,
    Sub,
    Mul,
    ScalarMul(f32),
    MatMul,
    Transpose2d,
    Conv3d,
    Conv3dBwdInput,
    Conv3dBwdKernel,
    Relu,
    SumAxes {
        axes: Vec<usize>,
    },
    MeanAxes {
        axes: Vec<usize>,
        count: usize,
    },
    BroadcastAxes {
        axes: Vec<usize>,
    },
    SoftmaxRows,
    SoftmaxCrossEntropy {
        labels: Vec<usize>,
    },
    Reshape,
    ConcatAxis {
        axis: usize,
    },
    SliceAxis {
        axis: usize,
        start: usize,
        len: usize,
    },
}

pub(crate) struct Node {
    pub op: Op,
    pub parents: Vec<NodeId>,
    pub value: Tensor,
}

#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    check_finite: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            check_finite: false,
        }
    }

    /// Debug mode: verify every freshly computed value is finite.
    pub fn with_finite_checks(mut self) -> Self {
        self.check_finite = true;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, op: Op, parents: Vec<NodeId>, value: Tensor) -> Result<NodeId> {
        if self.check_finite {
            value.check_finite("node construction")?;
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, parents, value });
        Ok(id)
    }

    fn check_id(&self, id: NodeId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::UnknownNode {
                id: id.0,
                len: self.nodes.len(),
            })
        }
    }

    // ── leaves ───────────────────────────────────────────────────────

    pub fn leaf(&mut self, value: Tensor, kind: LeafKind) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Leaf(kind),
            parents: vec![],
            value,
        });
        id
    }

    pub fn parameter(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, LeafKind::Parameter)
    }

    pub fn data(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, LeafKind::Data)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, LeafKind::Constant)
    }

    pub fn leaf_kind(&self, id: NodeId) -> Option<LeafKind> {
        match self.nodes[id.0].op {
            Op::Leaf(k) => Some(k),
            _ => None,
        }
    }

    // ── elementwise and scalar ops ───────────────────────────────────

    pub fn identity(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_id(x)?;
        let v = self.nodes[x.0].value.clone();
        self.push(Op::Identity, vec![x], v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip_values("add", a, b, |x, y| x + y)?;
        self.push(Op::Add, vec![a, b], v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip_values("sub", a, b, |x, y| x - y)?;
        self.push(Op::Sub, vec![a, b], v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip_values("mul", a, b, |x, y| x * y)?;
        self.push(Op::Mul, vec![a, b], v)
    }

    pub fn scalar_mul(&mut self, x: NodeId, c: f32) -> Result<NodeId> {
        self.check_id(x)?;
        let xv = &self.nodes[x.0].value;
        let v = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&a| a * c).collect())?;
        self.push(Op::ScalarMul(c), vec![x], v)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_id(x)?;
        let xv = &self.nodes[x.0].value;
        let v = Tensor::new(
            xv.shape().to_vec(),
            xv.data().iter().map(|&a| a.max(0.0)).collect(),
        )?;
        self.push(Op::Relu, vec![x], v)
    }

    fn zip_values(
        &self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<Tensor> {
        self.check_id(a)?;
        self.check_id(b)?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(Error::ShapeMismatch {
                op,
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        Tensor::new(
            av.shape().to_vec(),
            av.data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| f(x, y))
                .collect(),
        )
    }

    // ── linear algebra ───────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_id(a)?;
        self.check_id(b)?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let v = kernels::matmul(av, bv);
        self.push(Op::MatMul, vec![a, b], v)
    }

    pub fn transpose2d(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_id(x)?;
        let xv = &self.nodes[x.0].value;
        if xv.shape().len() != 2 {
            return Err(Error::BadShape {
                op: "transpose2d",
                expected: "rank-2 tensor".into(),
                shape: xv.shape().to_vec(),
            });
        }
        let v = kernels::transpose2d(xv);
        self.push(Op::Transpose2d, vec![x], v)
    }

    // ── convolution family ───────────────────────────────────────────

    /// `x`: [N,T,H,W,CI], `w`: [KT,KH,KW,CI,CO]; stride 1, zero padding
    /// preserving T,H,W. Kernel extents must be odd.
    pub fn conv3d(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        self.check_id(x)?;
        self.check_id(w)?;
        let (xv, wv) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
        self.conv_shape_check("conv3d", xv.shape(), wv.shape(), 3)?;
        let v = kernels::conv3d(xv, wv);
        self.push(Op::Conv3d, vec![x, w], v)
    }

    /// Adjoint of `conv3d` w.r.t. its input: `dy`: [N,T,H,W,CO],
    /// `w`: [KT,KH,KW,CI,CO] -> [N,T,H,W,CI]. Exposed for verification.
    pub fn conv3d_bwd_input(&mut self, dy: NodeId, w: NodeId) -> Result<NodeId> {
        self.check_id(dy)?;
        self.check_id(w)?;
        let (dv, wv) = (&self.nodes[dy.0].value, &self.nodes[w.0].value);
        self.conv_shape_check("conv3d_bwd_input", dv.shape(), wv.shape(), 4)?;
        let v = kernels::conv3d_bwd_input(dv, wv);
        self.push(Op::Conv3dBwdInput, vec![dy, w], v)
    }

    /// Adjoint of `conv3d` w.r.t. its kernel: `x`: [N,T,H,W,CI],
    /// `dy`: [N,T,H,W,CO] -> [KT,KH,KW,CI,CO]. Exposed for verification.
    pub fn conv3d_bwd_kernel(
        &mut self,
        x: NodeId,
        dy: NodeId,
        kdims: (usize, usize, usize),
    ) -> Result<NodeId> {
        self.check_id(x)?;
        self.check_id(dy)?;
        let (xv, dv) = (&self.nodes[x.0].value, &self.nodes[dy.0].value);
        if xv.shape().len() != 5
            || dv.shape().len() != 5
            || xv.shape()[..4] != dv.shape()[..4]
            || kdims.0 % 2 == 0
            || kdims.1 % 2 == 0
            || kdims.2 % 2 == 0
        {
            return Err(Error::ShapeMismatch {
                op: "conv3d_bwd_kernel",
                left: xv.shape().to_vec(),
                right: dv.shape().to_vec(),
            });
        }
        let v = kernels::conv3d_bwd_kernel(xv, dv, kdims);
        self.push(Op::Conv3dBwdKernel, vec![x, dy], v)
    }

    fn conv_shape_check(
        &self,
        op: &'static str,
        x: &[usize],
        w: &[usize],
        x_channel_matches_w_axis: usize,
    ) -> Result<()> {
        // Extents smaller than the kernel are fine: same-padding keeps the
        // output extent and the kernels bound-check every tap.
        let ok = x.len() == 5
            && w.len() == 5
            && w[0] % 2 == 1
            && w[1] % 2 == 1
            && w[2] % 2 == 1
            && x[4] == w[x_channel_matches_w_axis];
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op,
                left: x.to_vec(),
                right: w.to_vec(),
            })
        }
    }

    // ── reductions and broadcasts ────────────────────────────────────

    /// Sum over `axes`; reduced axes are removed from the shape.
    pub fn sum_axes(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        let axes = self.reduce_check("sum_axes", x, axes)?;
        let v = kernels::sum_axes(&self.nodes[x.0].value, &axes);
        self.push(Op::SumAxes { axes }, vec![x], v)
    }

    pub fn mean_axes(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        let axes = self.reduce_check("mean_axes", x, axes)?;
        let shape = self.nodes[x.0].value.shape();
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        let summed = kernels::sum_axes(&self.nodes[x.0].value, &axes);
        let scale = 1.0 / count as f64;
        let v = Tensor::new(
            summed.shape().to_vec(),
            summed
                .data()
                .iter()
                .map(|&s| ((s as f64) * scale) as f32)
                .collect(),
        )?;
        self.push(Op::MeanAxes { axes, count }, vec![x], v)
    }

    /// Full reduction to a rank-0 scalar.
    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let rank = self.shape_of(x)?.len();
        self.sum_axes(x, &(0..rank).collect::<Vec<_>>())
    }

    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let rank = self.shape_of(x)?.len();
        self.mean_axes(x, &(0..rank).collect::<Vec<_>>())
    }

    /// Σ x², a rank-0 scalar. Composite of `mul` and `sum_all`.
    pub fn sq_l2_norm(&mut self, x: NodeId) -> Result<NodeId> {
        let sq = self.mul(x, x)?;
        self.sum_all(sq)
    }

    /// Repeat `x` along inserted `axes` to reach `out_shape`.
    pub fn broadcast_axes(
        &mut self,
        x: NodeId,
        out_shape: &[usize],
        axes: &[usize],
    ) -> Result<NodeId> {
        self.check_id(x)?;
        let axes = normalize_axes(axes);
        let kept: Vec<usize> = out_shape
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &e)| e)
            .collect();
        if axes.iter().any(|&a| a >= out_shape.len()) || kept != self.nodes[x.0].value.shape() {
            return Err(Error::BadShape {
                op: "broadcast_axes",
                expected: format!("shape {:?} minus axes {:?}", out_shape, axes),
                shape: self.nodes[x.0].value.shape().to_vec(),
            });
        }
        let v = kernels::broadcast_axes(&self.nodes[x.0].value, out_shape, &axes);
        self.push(Op::BroadcastAxes { axes }, vec![x], v)
    }

    /// Broadcast a rank-0 scalar to an arbitrary shape.
    pub fn broadcast_scalar(&mut self, x: NodeId, out_shape: &[usize]) -> Result<NodeId> {
        let all: Vec<usize> = (0..out_shape.len()).collect();
        self.broadcast_axes(x, out_shape, &all)
    }

    fn reduce_check(&self, op: &'static str, x: NodeId, axes: &[usize]) -> Result<Vec<usize>> {
        self.check_id(x)?;
        let rank = self.nodes[x.0].value.shape().len();
        let axes = normalize_axes(axes);
        if axes.iter().any(|&a| a >= rank) {
            return Err(Error::BadShape {
                op,
                expected: format!("axes < rank {}", rank),
                shape: axes,
            });
        }
        Ok(axes)
    }

    fn shape_of(&self, x: NodeId) -> Result<&[usize]> {
        self.check_id(x)?;
        Ok(self.nodes[x.0].value.shape())
    }

    // ── classification loss ──────────────────────────────────────────

    /// Row softmax of [B,K] logits.
    pub fn softmax_rows(&mut self, z: NodeId) -> Result<NodeId> {
        self.check_id(z)?;
        let zv = &self.nodes[z.0].value;
        if zv.shape().len() != 2 {
            return Err(Error::BadShape {
                op: "softmax_rows",
                expected: "rank-2 logits".into(),
                shape: zv.shape().to_vec(),
            });
        }
        let v = kernels::softmax_rows(zv);
        self.push(Op::SoftmaxRows, vec![z], v)
    }

    /// Mean softmax cross-entropy of [B,K] logits against integer labels;
    /// rank-0 scalar output.
    pub fn softmax_cross_entropy(&mut self, z: NodeId, labels: &[usize]) -> Result<NodeId> {
        self.check_id(z)?;
        let zv = &self.nodes[z.0].value;
        if zv.shape().len() != 2 || zv.shape()[0] != labels.len() {
            return Err(Error::BadShape {
                op: "softmax_cross_entropy",
                expected: format!("[B,K] logits with B == {} labels", labels.len()),
                shape: zv.shape().to_vec(),
            });
        }
        let k = zv.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::BadShape {
                op: "softmax_cross_entropy",
                expected: format!("labels < {}", k),
                shape: vec![bad],
            });
        }
        let v = Tensor::scalar(kernels::softmax_cross_entropy(zv, labels));
        self.push(
            Op::SoftmaxCrossEntropy {
                labels: labels.to_vec(),
            },
            vec![z],
            v,
        )
    }

    // ── shape manipulation ───────────────────────────────────────────

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.check_id(x)?;
        let v = self.nodes[x.0].value.reshaped(shape)?;
        self.push(Op::Reshape, vec![x], v)
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::BadShape {
                op: "concat",
                expected: "at least one input".into(),
                shape: vec![],
            });
        }
        for &x in xs {
            self.check_id(x)?;
        }
        let first = self.nodes[xs[0].0].value.shape().to_vec();
        if axis >= first.len() {
            return Err(Error::BadShape {
                op: "concat",
                expected: format!("axis < rank {}", first.len()),
                shape: vec![axis],
            });
        }
        let mut total_axis = 0usize;
        for &x in xs {
            let s = self.nodes[x.0].value.shape();
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: first.clone(),
                    right: s.to_vec(),
                });
            }
            total_axis += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total_axis;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![0.0f32; out_shape.iter().product()];
        let row = total_axis * inner;
        let mut offset = 0usize;
        for &x in xs {
            let v = &self.nodes[x.0].value;
            let e = v.shape()[axis];
            let src = v.data();
            for o in 0..outer {
                let dst_start = o * row + offset * inner;
                let src_start = o * e * inner;
                out[dst_start..dst_start + e * inner]
                    .copy_from_slice(&src[src_start..src_start + e * inner]);
            }
            offset += e;
        }
        let v = Tensor::new(out_shape, out)?;
        self.push(Op::ConcatAxis { axis }, xs.to_vec(), v)
    }

    pub fn slice_axis(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        self.check_id(x)?;
        let shape = self.nodes[x.0].value.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::BadShape {
                op: "slice_axis",
                expected: format!("axis {} range {}..{} within extent", axis, start, start + len),
                shape,
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let e = shape[axis];
        let src = self.nodes[x.0].value.data();
        let mut out = vec![0.0f32; outer * len * inner];
        for o in 0..outer {
            let src_start = (o * e + start) * inner;
            let dst_start = o * len * inner;
            out[dst_start..dst_start + len * inner]
                .copy_from_slice(&src[src_start..src_start + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let v = Tensor::new(out_shape, out)?;
        self.push(
            Op::SliceAxis { axis, start, len },
            vec![x],
            v,
        )
    }
}

fn normalize_axes(axes: &[usize]) -> Vec<usize> {
    let mut a = axes.to_vec();
    a.sort_unstable();
    a.dedup();
    a
}
