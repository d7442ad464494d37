//! Graph-side view of sparse videos and the gradient-matching loss.
//!
//! Each key frame becomes a Parameter leaf. Every time position t gets a
//! *slot node*: an identity tap of the key leaf at key positions, or the
//! blend α·left + (1−α)·right at interior positions. A slot node's
//! adjoint is the partial derivative of the loss with respect to that
//! frame *held independent* — the probe gradient used by the insertion
//! criterion — while a key leaf's adjoint is the full chain-rule
//! gradient that drives the pixel updates.

use super::{blend_coefficients, SparseVideo};
use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::models::{forward, ModelSpec, Params};
use crate::tensor::Tensor;

/// Node handles for one sparse video inside a loss graph.
#[derive(Clone, Debug)]
pub struct VideoBinding {
    /// Parameter leaves, parallel to the video's keys.
    pub key_leaves: Vec<NodeId>,
    /// Slot node per time position, length T.
    pub slots: Vec<NodeId>,
    /// The video densified to [1, T, H, W, C].
    pub row: NodeId,
}

/// Bind one sparse video into the graph. The slot values reproduce
/// `interpolate` bit-for-bit: identical blend coefficients, identical
/// multiply-add order.
pub fn bind_video(g: &mut Graph, video: &SparseVideo) -> Result<VideoBinding> {
    let keys = video.keys();
    let key_leaves: Vec<NodeId> = keys
        .iter()
        .map(|k| g.parameter(k.frame.clone()))
        .collect();
    let frame_shape = video.frame_shape();
    let mut row_shape = vec![1, 1];
    row_shape.extend_from_slice(frame_shape);

    let mut slots = Vec::with_capacity(video.horizon);
    let mut rows = Vec::with_capacity(video.horizon);
    let mut seg = 0;
    for t in 0..video.horizon {
        let slot = if let Some(pos) = video.key_position(t) {
            seg = pos;
            g.identity(key_leaves[pos])?
        } else {
            let (a, b) = blend_coefficients(t, keys[seg].index, keys[seg + 1].index);
            let l = g.scalar_mul(key_leaves[seg], a)?;
            let r = g.scalar_mul(key_leaves[seg + 1], b)?;
            g.add(l, r)?
        };
        rows.push(g.reshape(slot, &row_shape)?);
        slots.push(slot);
    }
    let row = g.concat(&rows, 1)?;
    Ok(VideoBinding {
        key_leaves,
        slots,
        row,
    })
}

/// The matching loss and the handles needed to differentiate it.
#[derive(Debug)]
pub struct MatchGraph {
    pub loss: NodeId,
    /// Per-class loss terms, index = class id.
    pub class_terms: Vec<NodeId>,
    /// Parallel to the input video list.
    pub bindings: Vec<VideoBinding>,
}

/// Σ_c ‖∇_θ L(f_θ(syn_c), c) − ∇_θ L(f_θ(real_c), c)‖²₂ with L softmax
/// cross-entropy. The synthetic branch's parameter gradient is built as
/// graph nodes (so the loss is differentiable w.r.t. key frames); the
/// real branch's gradient is computed once and frozen as a constant.
///
/// `videos` must be ordered class-major: videos[c·vpc + j] has label c.
pub fn matching_loss(
    g: &mut Graph,
    spec: &ModelSpec,
    theta: &Params,
    videos: &[SparseVideo],
    real: &[Tensor],
) -> Result<MatchGraph> {
    let classes = real.len();
    if classes == 0 || videos.is_empty() || videos.len() % classes != 0 {
        return Err(Error::InvalidConfig(format!(
            "matching_loss: {} videos cannot be split over {} classes",
            videos.len(),
            classes
        )));
    }
    let vpc = videos.len() / classes;
    let theta_ids = theta.bind(g);

    let mut bindings = Vec::with_capacity(videos.len());
    let mut class_terms = Vec::with_capacity(classes);
    let mut loss = None;
    for class in 0..classes {
        let group = &videos[class * vpc..(class + 1) * vpc];
        let mut rows = Vec::with_capacity(vpc);
        for video in group {
            if video.label != class {
                return Err(Error::InvalidConfig(format!(
                    "matching_loss expects class-major video order; found label {} in class {} block",
                    video.label, class
                )));
            }
            let binding = bind_video(g, video)?;
            rows.push(binding.row);
            bindings.push(binding);
        }
        let syn_batch = g.concat(&rows, 0)?;
        let labels = vec![class; vpc];
        let logits = forward(g, spec, &theta_ids, syn_batch)?;
        let task_loss = g.softmax_cross_entropy(logits, &labels)?;
        let syn_grad = g.grad_as_node(task_loss, &theta_ids)?;

        let real_grad = real_branch_gradient(spec, theta, &real[class], class)?;
        let frozen = g.constant(real_grad);
        let diff = g.sub(syn_grad, frozen)?;
        let term = g.sq_l2_norm(diff)?;
        class_terms.push(term);
        loss = Some(match loss {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    Ok(MatchGraph {
        loss: loss.unwrap(),
        class_terms,
        bindings,
    })
}

/// ∇_θ of the task loss on one real batch, flattened in parameter order
/// — the same layout `grad_as_node` produces, so the two branches
/// subtract coordinate-for-coordinate.
fn real_branch_gradient(
    spec: &ModelSpec,
    theta: &Params,
    batch: &Tensor,
    class: usize,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let theta_ids = theta.bind(&mut g);
    let data = g.data(batch.clone());
    let logits = forward(&mut g, spec, &theta_ids, data)?;
    let labels = vec![class; batch.shape()[0]];
    let loss = g.softmax_cross_entropy(logits, &labels)?;
    let grads = g.backward(loss, &theta_ids)?;
    let mut flat = Vec::with_capacity(grads.iter().map(Tensor::numel).sum());
    for grad in grads {
        flat.extend_from_slice(grad.data());
    }
    Ok(Tensor::from_vec(flat))
}

/// Gradient of the loss at every time position of one video: the full
/// key gradient at key positions, the probe (independent-leaf) gradient
/// at interior positions — or, with `chain_rule` set, the α-blend of the
/// flanking key gradients instead of the probe.
pub fn frame_gradients(
    g: &mut Graph,
    loss: NodeId,
    video: &SparseVideo,
    binding: &VideoBinding,
    chain_rule: bool,
) -> Result<Vec<Tensor>> {
    let mut wrt = binding.key_leaves.clone();
    wrt.extend_from_slice(&binding.slots);
    let grads = g.backward(loss, &wrt)?;
    let (key_grads, slot_grads) = grads.split_at(binding.key_leaves.len());
    assemble_position_grads(video, key_grads, slot_grads, chain_rule)
}

/// Merge per-key and per-slot gradients into the per-position map.
pub(crate) fn assemble_position_grads(
    video: &SparseVideo,
    key_grads: &[Tensor],
    slot_grads: &[Tensor],
    chain_rule: bool,
) -> Result<Vec<Tensor>> {
    debug_assert_eq!(key_grads.len(), video.key_count());
    debug_assert_eq!(slot_grads.len(), video.horizon);
    (0..video.horizon)
        .map(|t| {
            if let Some(pos) = video.key_position(t) {
                Ok(key_grads[pos].clone())
            } else if !chain_rule {
                Ok(slot_grads[t].clone())
            } else {
                let (left, right) = video.flanking_keys(t)?;
                let (a, b) = blend_coefficients(t, left, right);
                let mut blend = key_grads[video.key_position(left).unwrap()].clone();
                blend.scale(a);
                blend.axpy(b, &key_grads[video.key_position(right).unwrap()]);
                Ok(blend)
            }
        })
        .collect()
}
