//! Backward pass: gradient construction as graph extension.
//!
//! `backward_nodes` walks the graph from a scalar root in reverse arena
//! order and *appends* the adjoint computation to the same graph. Every
//! backward rule below is written in terms of the public op constructors,
//! so the returned gradients are ordinary nodes: running `backward_nodes`
//! again on a scalar derived from them yields second-order gradients.
//!
//! Conventions baked in here:
//! - `relu` backward multiplies by a constant-folded 0/1 mask of the
//!   *forward input sign*; the mask is deliberately not differentiated
//!   (the second derivative of relu is zero almost everywhere).
//! - a `wrt` node the root does not depend on gets an explicit zero
//!   constant of matching shape, never an error.
//! - accumulation order is fixed by arena order, so repeated runs build
//!   identical graphs and bit-identical values.

use super::{Graph, NodeId, Op};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

impl Graph {
    /// Gradient of scalar `root` w.r.t. each node in `wrt`, returned as
    /// node ids in the extended graph (aligned with `wrt`).
    pub fn backward_nodes(&mut self, root: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        self.check_id(root)?;
        for &w in wrt {
            self.check_id(w)?;
        }
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::NonScalarRoot {
                shape: self.nodes[root.0].value.shape().to_vec(),
            });
        }

        // Only nodes present before the pass participate in traversal;
        // nodes appended below are gradient computation, not targets.
        let n0 = self.nodes.len();
        let reachable = self.reachable_from(root, n0);

        let mut adjoint: Vec<Option<NodeId>> = vec![None; n0];
        adjoint[root.0] = Some(self.constant(Tensor::scalar(1.0)));

        for i in (0..=root.0).rev() {
            if !reachable[i] {
                continue;
            }
            let a = match adjoint[i] {
                Some(a) => a,
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            let parents = self.nodes[i].parents.clone();
            self.apply_rule(NodeId(i), &op, &parents, a, &mut adjoint)?;
        }

        wrt.iter()
            .map(|&w| match adjoint.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let shape = self.nodes[w.0].value.shape().to_vec();
                    Ok(self.constant(Tensor::zeros(&shape)))
                }
            })
            .collect()
    }

    /// Gradient values of scalar `root` w.r.t. `wrt`.
    pub fn backward(&mut self, root: NodeId, wrt: &[NodeId]) -> Result<Vec<Tensor>> {
        let ids = self.backward_nodes(root, wrt)?;
        Ok(ids.iter().map(|&g| self.nodes[g.0].value.clone()).collect())
    }

    /// Gradient of `root` w.r.t. `wrt`, flattened and concatenated into a
    /// single 1-D node — the differentiable gradient vector used by
    /// gradient-matching losses.
    pub fn grad_as_node(&mut self, root: NodeId, wrt: &[NodeId]) -> Result<NodeId> {
        let ids = self.backward_nodes(root, wrt)?;
        let mut flat = Vec::with_capacity(ids.len());
        for g in ids {
            let n = self.nodes[g.0].value.numel();
            flat.push(self.reshape(g, &[n])?);
        }
        self.concat(&flat, 0)
    }

    fn reachable_from(&self, root: NodeId, n0: usize) -> Vec<bool> {
        let mut seen = vec![false; n0];
        let mut stack = vec![root.0];
        seen[root.0] = true;
        while let Some(i) = stack.pop() {
            for p in &self.nodes[i].parents {
                if !seen[p.0] {
                    seen[p.0] = true;
                    stack.push(p.0);
                }
            }
        }
        seen
    }

    fn accumulate(
        &mut self,
        adjoint: &mut [Option<NodeId>],
        target: NodeId,
        contribution: NodeId,
    ) -> Result<()> {
        adjoint[target.0] = Some(match adjoint[target.0] {
            Some(existing) => self.add(existing, contribution)?,
            None => contribution,
        });
        Ok(())
    }

    fn apply_rule(
        &mut self,
        node: NodeId,
        op: &Op,
        parents: &[NodeId],
        a: NodeId,
        adjoint: &mut [Option<NodeId>],
    ) -> Result<()> {
        match op {
            Op::Leaf(_) => {}
            Op::Identity | Op::Reshape => {
                let x = parents[0];
                let g = match op {
                    Op::Identity => a,
                    _ => {
                        let shape = self.nodes[x.0].value.shape().to_vec();
                        self.reshape(a, &shape)?
                    }
                };
                self.accumulate(adjoint, x, g)?;
            }
            Op::Add => {
                self.accumulate(adjoint, parents[0], a)?;
                self.accumulate(adjoint, parents[1], a)?;
            }
            Op::Sub => {
                self.accumulate(adjoint, parents[0], a)?;
                let neg = self.scalar_mul(a, -1.0)?;
                self.accumulate(adjoint, parents[1], neg)?;
            }
            Op::Mul => {
                let (x, y) = (parents[0], parents[1]);
                let gx = self.mul(a, y)?;
                self.accumulate(adjoint, x, gx)?;
                let gy = self.mul(a, x)?;
                self.accumulate(adjoint, y, gy)?;
            }
            Op::ScalarMul(c) => {
                let g = self.scalar_mul(a, *c)?;
                self.accumulate(adjoint, parents[0], g)?;
            }
            Op::MatMul => {
                let (x, y) = (parents[0], parents[1]);
                let yt = self.transpose2d(y)?;
                let gx = self.matmul(a, yt)?;
                self.accumulate(adjoint, x, gx)?;
                let xt = self.transpose2d(x)?;
                let gy = self.matmul(xt, a)?;
                self.accumulate(adjoint, y, gy)?;
            }
            Op::Transpose2d => {
                let g = self.transpose2d(a)?;
                self.accumulate(adjoint, parents[0], g)?;
            }
            Op::Conv3d => {
                let (x, w) = (parents[0], parents[1]);
                let ws = self.nodes[w.0].value.shape();
                let kdims = (ws[0], ws[1], ws[2]);
                let gx = self.conv3d_bwd_input(a, w)?;
                self.accumulate(adjoint, x, gx)?;
                let gw = self.conv3d_bwd_kernel(x, a, kdims)?;
                self.accumulate(adjoint, w, gw)?;
            }
            Op::Conv3dBwdInput => {
                // z = bwd_input(dy, w); the adjoint is input-shaped and
                // re-enters the convolution pair with roles swapped.
                let (dy, w) = (parents[0], parents[1]);
                let ws = self.nodes[w.0].value.shape();
                let kdims = (ws[0], ws[1], ws[2]);
                let g_dy = self.conv3d(a, w)?;
                self.accumulate(adjoint, dy, g_dy)?;
                let g_w = self.conv3d_bwd_kernel(a, dy, kdims)?;
                self.accumulate(adjoint, w, g_w)?;
            }
            Op::Conv3dBwdKernel => {
                // z = bwd_kernel(x, dy); the kernel-shaped adjoint acts as
                // a convolution weight for both parent gradients.
                let (x, dy) = (parents[0], parents[1]);
                let g_x = self.conv3d_bwd_input(dy, a)?;
                self.accumulate(adjoint, x, g_x)?;
                let g_dy = self.conv3d(x, a)?;
                self.accumulate(adjoint, dy, g_dy)?;
            }
            Op::Relu => {
                let x = parents[0];
                let mask = Tensor::new(
                    self.nodes[x.0].value.shape().to_vec(),
                    self.nodes[x.0]
                        .value
                        .data()
                        .iter()
                        .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
                        .collect(),
                )?;
                let mask = self.constant(mask);
                let g = self.mul(a, mask)?;
                self.accumulate(adjoint, x, g)?;
            }
            Op::SumAxes { axes } => {
                let x = parents[0];
                let shape = self.nodes[x.0].value.shape().to_vec();
                let g = self.broadcast_axes(a, &shape, axes)?;
                self.accumulate(adjoint, x, g)?;
            }
            Op::MeanAxes { axes, count } => {
                let x = parents[0];
                let shape = self.nodes[x.0].value.shape().to_vec();
                let g = self.broadcast_axes(a, &shape, axes)?;
                let g = self.scalar_mul(g, 1.0 / *count as f32)?;
                self.accumulate(adjoint, x, g)?;
            }
            Op::BroadcastAxes { axes } => {
                let g = self.sum_axes(a, axes)?;
                self.accumulate(adjoint, parents[0], g)?;
            }
            Op::SoftmaxRows => {
                // dz = s∘a − s∘rowsum(s∘a); `node` itself is s, kept as a
                // live node so the rule stays twice-differentiable.
                let z = parents[0];
                let s = node;
                let shape = self.nodes[s.0].value.shape().to_vec();
                let sa = self.mul(s, a)?;
                let row = self.sum_axes(sa, &[1])?;
                let row = self.broadcast_axes(row, &shape, &[1])?;
                let srow = self.mul(s, row)?;
                let g = self.sub(sa, srow)?;
                self.accumulate(adjoint, z, g)?;
            }
            Op::SoftmaxCrossEntropy { labels } => {
                // dz = a ⊗ (softmax(z) − onehot)/B, with softmax rebuilt as
                // a node on the original logits.
                let z = parents[0];
                let shape = self.nodes[z.0].value.shape().to_vec();
                let batch = shape[0];
                let mut onehot = Tensor::zeros(&shape);
                for (b, &y) in labels.iter().enumerate() {
                    onehot.data_mut()[b * shape[1] + y] = 1.0;
                }
                let onehot = self.constant(onehot);
                let s = self.softmax_rows(z)?;
                let diff = self.sub(s, onehot)?;
                let diff = self.scalar_mul(diff, 1.0 / batch as f32)?;
                let ab = self.broadcast_scalar(a, &shape)?;
                let g = self.mul(ab, diff)?;
                self.accumulate(adjoint, z, g)?;
            }
            Op::ConcatAxis { axis } => {
                let mut offset = 0usize;
                for &p in parents {
                    let len = self.nodes[p.0].value.shape()[*axis];
                    let g = self.slice_axis(a, *axis, offset, len)?;
                    self.accumulate(adjoint, p, g)?;
                    offset += len;
                }
            }
            Op::SliceAxis { axis, start, len } => {
                // Scatter back into the source extent by concatenating the
                // adjoint between zero blocks.
                let x = parents[0];
                let shape = self.nodes[x.0].value.shape().to_vec();
                let extent = shape[*axis];
                let mut parts = Vec::with_capacity(3);
                if *start > 0 {
                    let mut s = shape.clone();
                    s[*axis] = *start;
                    parts.push(self.constant(Tensor::zeros(&s)));
                }
                parts.push(a);
                if start + len < extent {
                    let mut s = shape.clone();
                    s[*axis] = extent - start - len;
                    parts.push(self.constant(Tensor::zeros(&s)));
                }
                let g = self.concat(&parts, *axis)?;
                self.accumulate(adjoint, x, g)?;
            }
        }
        Ok(())
    }
}
