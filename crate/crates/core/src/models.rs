//! Small differentiable video classifiers.
//!
//! Three architectures share one parameter convention (a named, ordered
//! tensor list) so condensation and evaluation can swap them freely:
//!
//! - `conv3d-micro` — two blocks of (3×3×3 conv → relu → 2×2 spatial
//!   mean-pool), global mean over time and space, linear head. The
//!   matching network: its kernels couple adjacent frames, so temporal
//!   structure reaches the parameter gradients.
//! - `conv2d-mean` — identical layout but 1×3×3 kernels and no temporal
//!   mixing anywhere except a closing mean over frames; exactly
//!   invariant to frame permutation by construction.
//! - `conv2d-recurrent` — per-frame embeddings folded by the affine
//!   recurrence h_t = h_{t−1}·W_h + e_t·W_e + b, head on the final state;
//!   order-sensitive but cheap.
//!
//! Downsampling is a strided mean-pool (reshape + mean), keeping the
//! forward smooth everywhere except relu — which finite-difference
//! verification of the meta-gradient depends on.

use crate::autograd::{Graph, NodeId};
use crate::bytes;
use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::rng::CounterRng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    Conv3dMicro,
    Conv2dMean,
    Conv2dRecurrent,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [
        Architecture::Conv3dMicro,
        Architecture::Conv2dMean,
        Architecture::Conv2dRecurrent,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Architecture::Conv3dMicro => "conv3d-micro",
            Architecture::Conv2dMean => "conv2d-mean",
            Architecture::Conv2dRecurrent => "conv2d-recurrent",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "conv3d-micro" => Ok(Architecture::Conv3dMicro),
            "conv2d-mean" => Ok(Architecture::Conv2dMean),
            "conv2d-recurrent" => Ok(Architecture::Conv2dRecurrent),
            other => Err(Error::InvalidConfig(format!(
                "unknown architecture '{}' (expected conv3d-micro | conv2d-mean | conv2d-recurrent)",
                other
            ))),
        }
    }

    /// Temporal kernel extent of the conv stack.
    fn kt(self) -> usize {
        match self {
            Architecture::Conv3dMicro => 3,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub widths: (usize, usize),
    pub classes: usize,
    pub geometry: Geometry,
}

impl ModelSpec {
    pub fn new(
        architecture: Architecture,
        widths: (usize, usize),
        classes: usize,
        geometry: Geometry,
    ) -> Result<Self> {
        let spec = ModelSpec {
            architecture,
            widths,
            classes,
            geometry,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Desk-scale default: widths (8, 16) on 8×16×16×3 inputs.
    pub fn desk(architecture: Architecture, classes: usize) -> Result<Self> {
        ModelSpec::new(architecture, (8, 16), classes, Geometry::desk())
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "class count must be ≥ 2, got {}",
                self.classes
            )));
        }
        if self.widths.0 == 0 || self.widths.1 == 0 {
            return Err(Error::InvalidConfig("channel widths must be positive".into()));
        }
        let g = &self.geometry;
        if g.t < self.architecture.kt() || g.h < 3 || g.w < 3 {
            return Err(Error::InvalidConfig(format!(
                "geometry {} smaller than the {}x3x3 kernel of {}",
                g,
                self.architecture.kt(),
                self.architecture.id()
            )));
        }
        // Two 2× spatial mean-pools need divisibility by 4.
        if g.h % 4 != 0 || g.w % 4 != 0 {
            return Err(Error::InvalidConfig(format!(
                "height and width must be divisible by 4 for two pooling stages, got {}x{}",
                g.h, g.w
            )));
        }
        Ok(())
    }

    /// Ordered (name, shape) table — the single source of truth for
    /// parameter layout shared by init, binding and forward.
    pub fn layer_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (w0, w1) = self.widths;
        let c = self.geometry.c;
        let kt = self.architecture.kt();
        let mut layers = vec![
            ("conv1.weight".to_string(), vec![kt, 3, 3, c, w0]),
            ("conv1.bias".to_string(), vec![w0]),
            ("conv2.weight".to_string(), vec![kt, 3, 3, w0, w1]),
            ("conv2.bias".to_string(), vec![w1]),
        ];
        if self.architecture == Architecture::Conv2dRecurrent {
            layers.push(("rec.w_h".to_string(), vec![w1, w1]));
            layers.push(("rec.w_e".to_string(), vec![w1, w1]));
            layers.push(("rec.bias".to_string(), vec![w1]));
        }
        layers.push(("head.weight".to_string(), vec![w1, self.classes]));
        layers.push(("head.bias".to_string(), vec![self.classes]));
        layers
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Named, ordered model parameters.
#[derive(Clone, Debug)]
pub struct Params {
    entries: Vec<(String, Tensor)>,
}

impl Params {
    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub(crate) fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Self {
        Params { entries }
    }

    /// Insert every tensor as a trainable leaf, in layer order.
    pub fn bind(&self, g: &mut Graph) -> Vec<NodeId> {
        self.entries
            .iter()
            .map(|(_, t)| g.parameter(t.clone()))
            .collect()
    }
}

/// Centered-uniform initialization scaled by 1/√(fan-in); biases zero.
/// Each tensor draws from its own derived stream, so the layout — not
/// draw order — determines the values.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Params {
    let base = CounterRng::new(seed);
    let entries = spec
        .layer_shapes()
        .into_iter()
        .enumerate()
        .map(|(i, (name, shape))| {
            let tensor = if shape.len() == 1 {
                Tensor::zeros(&shape)
            } else {
                let fan_in: usize = shape[..shape.len() - 1].iter().product();
                let limit = (3.0 / fan_in as f64).sqrt();
                let mut rng = base.derive(i as u64);
                let data = (0..shape.iter().product::<usize>())
                    .map(|_| rng.uniform(-limit, limit) as f32)
                    .collect();
                Tensor::new(shape, data).expect("layer table shapes are consistent")
            };
            (name, tensor)
        })
        .collect();
    Params { entries }
}

// ───────────────────────────── container IO ─────────────────────────────

const PARAMS_MAGIC: [u8; 4] = *b"PVPT";
const PARAMS_VERSION: u32 = 1;

/// Serialize: magic, version, entry count, then per tensor its name,
/// rank, dimensions and raw little-endian f32 data, in layer order.
pub fn save_params(params: &Params, path: impl AsRef<std::path::Path>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(&PARAMS_MAGIC);
    bytes::push_u32(&mut out, PARAMS_VERSION);
    bytes::push_u32(&mut out, params.entries.len() as u32);
    for (name, tensor) in &params.entries {
        bytes::push_str(&mut out, name);
        bytes::push_u32(&mut out, tensor.shape().len() as u32);
        for &d in tensor.shape() {
            bytes::push_u32(&mut out, d as u32);
        }
        bytes::push_f32s(&mut out, tensor.data());
    }
    bytes::write_file(path.as_ref(), &out)
}

pub fn load_params(path: impl AsRef<std::path::Path>) -> Result<Params> {
    let buf = bytes::read_file(path.as_ref())?;
    let mut r = bytes::Reader::new(&buf);
    r.magic(PARAMS_MAGIC)?;
    let version = r.u32()?;
    if version != PARAMS_VERSION {
        return Err(Error::BadVersion(version));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel = shape.iter().product::<usize>();
        let tensor = Tensor::new(shape, r.f32s(numel)?)?;
        entries.push((name, tensor));
    }
    if r.remaining() != 0 {
        return Err(Error::TrailingBytes(r.remaining()));
    }
    Ok(Params { entries })
}

/// Pre-head video embedding, [B, w1]: the pooled representation the
/// classification head reads. Coreset selection reuses this from a
/// fixed randomly initialized network.
pub fn embed(g: &mut Graph, spec: &ModelSpec, params: &[NodeId], batch: NodeId) -> Result<NodeId> {
    let geom = &spec.geometry;
    let shape = g.shape(batch).to_vec();
    let expected_tail = geom.video_shape();
    if shape.len() != 5 || shape[1..] != expected_tail {
        return Err(Error::BadShape {
            op: "model forward",
            expected: format!("[B, {}, {}, {}, {}]", geom.t, geom.h, geom.w, geom.c),
            shape,
        });
    }
    let n_expected = spec.layer_shapes().len();
    if params.len() != n_expected {
        return Err(Error::InvalidConfig(format!(
            "expected {} bound parameter nodes, got {}",
            n_expected,
            params.len()
        )));
    }

    let x = conv_block(g, batch, params[0], params[1])?;
    let x = conv_block(g, x, params[2], params[3])?;

    match spec.architecture {
        Architecture::Conv3dMicro | Architecture::Conv2dMean => g.mean_axes(x, &[1, 2, 3]),
        Architecture::Conv2dRecurrent => {
            let (w_h, w_e, b_h) = (params[4], params[5], params[6]);
            let e = g.mean_axes(x, &[2, 3])?; // [B, T, w1]
            let (b, t_len, width) = {
                let s = g.shape(e);
                (s[0], s[1], s[2])
            };
            let mut h = g.constant(Tensor::zeros(&[b, width]));
            let bias = g.broadcast_axes(b_h, &[b, width], &[0])?;
            for t in 0..t_len {
                let et = g.slice_axis(e, 1, t, 1)?;
                let et = g.reshape(et, &[b, width])?;
                let carried = g.matmul(h, w_h)?;
                let injected = g.matmul(et, w_e)?;
                let blend = g.add(carried, injected)?;
                h = g.add(blend, bias)?;
            }
            Ok(h)
        }
    }
}

/// Build the logits graph for one batch: `params` must be the node ids of
/// [`Params::bind`] (same order). Returns a [B, classes] node.
pub fn forward(
    g: &mut Graph,
    spec: &ModelSpec,
    params: &[NodeId],
    batch: NodeId,
) -> Result<NodeId> {
    let feat = embed(g, spec, params, batch)?;
    let (head_w, head_b) = {
        let n = params.len();
        (params[n - 2], params[n - 1])
    };
    let logits = g.matmul(feat, head_w)?;
    let batch_n = g.shape(logits)[0];
    let bias = g.broadcast_axes(head_b, &[batch_n, spec.classes], &[0])?;
    g.add(logits, bias)
}

/// conv → +bias → relu → 2×2 spatial mean-pool.
fn conv_block(g: &mut Graph, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
    let y = g.conv3d(x, weight)?;
    let shape = g.shape(y).to_vec();
    let b = g.broadcast_axes(bias, &shape, &[0, 1, 2, 3])?;
    let y = g.add(y, b)?;
    let y = g.relu(y)?;
    pool2x2(g, y)
}

/// Strided 2×2 spatial mean-pool via reshape: [N,T,H,W,C] →
/// [N,T,H/2,2,W/2,2,C] → mean over the two stride axes.
fn pool2x2(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let s = g.shape(x).to_vec();
    let (n, t, h, w, c) = (s[0], s[1], s[2], s[3], s[4]);
    let grouped = g.reshape(x, &[n, t, h / 2, 2, w / 2, 2, c])?;
    g.mean_axes(grouped, &[3, 5])
}
