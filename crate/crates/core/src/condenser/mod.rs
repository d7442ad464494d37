//! Sparse-video condensation: synthetic videos stored as a handful of
//! trainable key frames, reconstructed by linear temporal interpolation
//! (`interpolate`), optimized by per-class gradient matching
//! (`matching_loss`), and grown by gradient-misalignment-triggered frame
//! insertion (`insertion_scan`) inside a warm-up / insertion / cool-down
//! schedule (`condense`).
//!
//! The insertion trigger is principled: when a candidate frame's
//! gradient has negative cosine to both flanking key-frame gradients, no
//! first-order update of those two keys alone can decrease the loss at
//! the candidate (`verify_blockage` checks this as an executable
//! theorem), so the frame must become an independent key.

mod container;
mod graph_bind;
mod insertion;
mod run;

pub use container::{load_condensed, save_condensed, PVSC_MAGIC, PVSC_VERSION};
pub use graph_bind::{frame_gradients, matching_loss, MatchGraph, VideoBinding};
pub use insertion::{insertion_scan, lambda_grid, verify_blockage, ScanContext};
pub use run::{condense, CondenseOutput};

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::models::Params;
use crate::rng::{stream, CounterRng};
use crate::tensor::Tensor;

/// One stored frame of a sparse video at an explicit time index.
#[derive(Clone, Debug)]
pub struct KeyFrame {
    pub index: usize,
    pub frame: Tensor,
    /// Always true in this implementation; kept as data so containers
    /// and reports can state it explicitly.
    pub trainable: bool,
}

impl KeyFrame {
    pub fn new(index: usize, frame: Tensor) -> Self {
        KeyFrame {
            index,
            frame,
            trainable: true,
        }
    }
}

/// A synthetic video stored as ordered key frames over horizon T.
/// Invariants (enforced at construction and insertion): indices strictly
/// increasing, 0 and T−1 always present, all frames share one shape,
/// every key trainable.
#[derive(Clone, Debug)]
pub struct SparseVideo {
    pub label: usize,
    pub horizon: usize,
    keys: Vec<KeyFrame>,
}

impl SparseVideo {
    pub fn new(label: usize, horizon: usize, keys: Vec<KeyFrame>) -> Result<Self> {
        let video = SparseVideo {
            label,
            horizon,
            keys,
        };
        video.validate()?;
        Ok(video)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.horizon < 2 {
            return bad(format!("sparse video horizon {} < 2", self.horizon));
        }
        let first = match self.keys.first() {
            Some(k) => k,
            None => return bad("sparse video has no key frames".into()),
        };
        if first.index != 0 {
            return bad(format!("first key index {} != 0", first.index));
        }
        if self.keys.last().unwrap().index != self.horizon - 1 {
            return bad(format!(
                "last key index {} != horizon-1 ({})",
                self.keys.last().unwrap().index,
                self.horizon - 1
            ));
        }
        let shape = first.frame.shape().to_vec();
        for pair in self.keys.windows(2) {
            if pair[0].index >= pair[1].index {
                return bad(format!(
                    "key indices not strictly increasing: {} then {}",
                    pair[0].index, pair[1].index
                ));
            }
        }
        for k in &self.keys {
            if k.frame.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "sparse video key frames",
                    left: shape,
                    right: k.frame.shape().to_vec(),
                });
            }
            if !k.trainable {
                return bad(format!("key frame at {} is not trainable", k.index));
            }
        }
        Ok(())
    }

    pub fn keys(&self) -> &[KeyFrame] {
        &self.keys
    }

    pub fn key_count(&self) -> usize {
        self.keys.len()
    }

    pub fn key_indices(&self) -> Vec<usize> {
        self.keys.iter().map(|k| k.index).collect()
    }

    pub fn is_key(&self, t: usize) -> bool {
        self.key_position(t).is_some()
    }

    /// Position within `keys` of the key at time t, if any.
    pub fn key_position(&self, t: usize) -> Option<usize> {
        self.keys.binary_search_by_key(&t, |k| k.index).ok()
    }

    /// Time indices of the two keys flanking non-key position t.
    pub fn flanking_keys(&self, t: usize) -> Result<(usize, usize)> {
        if t >= self.horizon || self.is_key(t) {
            return Err(Error::InvalidConfig(format!(
                "position {t} is not an interior candidate"
            )));
        }
        let right = self.keys.partition_point(|k| k.index < t);
        Ok((self.keys[right - 1].index, self.keys[right].index))
    }

    pub fn frame_shape(&self) -> &[usize] {
        self.keys[0].frame.shape()
    }

    pub(crate) fn key_frame_mut(&mut self, position: usize) -> &mut Tensor {
        &mut self.keys[position].frame
    }

    /// Insert a new trainable key; returns its position within `keys`.
    pub fn insert_key(&mut self, index: usize, frame: Tensor) -> Result<usize> {
        if index == 0 || index >= self.horizon - 1 {
            return Err(Error::InvalidConfig(format!(
                "insertion index {index} outside (0, {})",
                self.horizon - 1
            )));
        }
        if frame.shape() != self.frame_shape() {
            return Err(Error::ShapeMismatch {
                op: "insert_key",
                left: self.frame_shape().to_vec(),
                right: frame.shape().to_vec(),
            });
        }
        match self.keys.binary_search_by_key(&index, |k| k.index) {
            Ok(_) => Err(Error::InvalidConfig(format!(
                "index {index} is already a key"
            ))),
            Err(position) => {
                self.keys.insert(position, KeyFrame::new(index, frame));
                Ok(position)
            }
        }
    }

    /// The video's frame at time t: the stored key verbatim, or the
    /// convex blend α·left + (1−α)·right of its flanking keys. This is
    /// the single source of interpolation arithmetic — the graph-side
    /// binding and the insertion initializer reproduce it bit-for-bit.
    pub fn interpolated_frame(&self, t: usize) -> Result<Tensor> {
        if t >= self.horizon {
            return Err(Error::InvalidConfig(format!(
                "frame index {t} outside horizon {}",
                self.horizon
            )));
        }
        if let Some(pos) = self.key_position(t) {
            return Ok(self.keys[pos].frame.clone());
        }
        let (left, right) = self.flanking_keys(t)?;
        let (a, b) = blend_coefficients(t, left, right);
        let lf = &self.keys[self.key_position(left).unwrap()].frame;
        let rf = &self.keys[self.key_position(right).unwrap()].frame;
        let data = lf
            .data()
            .iter()
            .zip(rf.data())
            .map(|(&l, &r)| a * l + b * r)
            .collect();
        Tensor::new(lf.shape().to_vec(), data)
    }
}

/// α_t = (k_{i+1} − t)/(k_{i+1} − k_i), returned as the f32 pair
/// (α, 1−α) so every consumer rounds identically.
pub(crate) fn blend_coefficients(t: usize, left: usize, right: usize) -> (f32, f32) {
    let alpha = (right - t) as f64 / (right - left) as f64;
    (alpha as f32, (1.0 - alpha) as f32)
}

/// Densify a sparse video to [T, H, W, C]. Key positions are copied
/// bit-exactly; interior positions are convex blends per Eq. 3.
pub fn interpolate(video: &SparseVideo) -> Result<Tensor> {
    let frame_numel: usize = video.frame_shape().iter().product();
    let mut out = Vec::with_capacity(video.horizon * frame_numel);
    for t in 0..video.horizon {
        out.extend_from_slice(video.interpolated_frame(t)?.data());
    }
    let mut shape = vec![video.horizon];
    shape.extend_from_slice(video.frame_shape());
    Tensor::new(shape, out)
}

/// Where an iteration falls in the condensation schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    WarmUp,
    Insertion,
    CoolDown,
}

/// Warm-up / insertion / cool-down split plus the insertion-scan cadence.
#[derive(Clone, Copy, Debug)]
pub struct PhaseSchedule {
    pub total: usize,
    pub warmup_fraction: f64,
    pub cooldown_fraction: f64,
    pub check_period: usize,
}

impl PhaseSchedule {
    pub fn new(
        total: usize,
        warmup_fraction: f64,
        cooldown_fraction: f64,
        check_period: usize,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if total == 0 {
            return bad("schedule needs at least one iteration".into());
        }
        if check_period == 0 {
            return bad("insertion check period must be >= 1".into());
        }
        for (name, f) in [("warm-up", warmup_fraction), ("cool-down", cooldown_fraction)] {
            if !(0.0..1.0).contains(&f) {
                return bad(format!("{name} fraction {f} outside [0, 1)"));
            }
        }
        if warmup_fraction + cooldown_fraction >= 1.0 {
            return bad(format!(
                "warm-up {warmup_fraction} + cool-down {cooldown_fraction} must be < 1"
            ));
        }
        Ok(PhaseSchedule {
            total,
            warmup_fraction,
            cooldown_fraction,
            check_period,
        })
    }

    /// Warm-up for iteration < ⌊wf·total⌋, cool-down for
    /// iteration ≥ ⌈(1−cf)·total⌉, insertion between.
    pub fn phase_of(&self, iteration: usize) -> Result<Phase> {
        if iteration >= self.total {
            return Err(Error::IterationOutOfRange {
                iteration,
                total: self.total,
            });
        }
        let warm_end = (self.warmup_fraction * self.total as f64).floor() as usize;
        let cool_start = ((1.0 - self.cooldown_fraction) * self.total as f64).ceil() as usize;
        Ok(if iteration < warm_end {
            Phase::WarmUp
        } else if iteration >= cool_start {
            Phase::CoolDown
        } else {
            Phase::Insertion
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InsertionMode {
    GradientGuided,
    RandomPosition,
    Disabled,
}

impl InsertionMode {
    pub fn id(self) -> &'static str {
        match self {
            InsertionMode::GradientGuided => "gradient-guided",
            InsertionMode::RandomPosition => "random-position",
            InsertionMode::Disabled => "disabled",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gradient-guided" => Ok(InsertionMode::GradientGuided),
            "random-position" => Ok(InsertionMode::RandomPosition),
            "disabled" => Ok(InsertionMode::Disabled),
            other => Err(Error::InvalidConfig(format!(
                "unknown insertion mode '{other}' (gradient-guided|random-position|disabled)"
            ))),
        }
    }
}

/// Eligibility criterion for candidate frames: cosine against ε, or L2
/// distance between unit-normalized gradients against a threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Criterion {
    Cosine,
    L2,
}

impl Criterion {
    pub fn id(self) -> &'static str {
        match self {
            Criterion::Cosine => "cosine",
            Criterion::L2 => "l2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Criterion::Cosine),
            "l2" => Ok(Criterion::L2),
            other => Err(Error::InvalidConfig(format!(
                "unknown criterion '{other}' (cosine|l2)"
            ))),
        }
    }
}

/// Matching-network lifetime across outer iterations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThetaMode {
    /// Re-sample θ every iteration (default).
    FreshEachIteration,
    /// Keep θ between iterations, re-sampling every N iterations.
    PersistWithReset(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CondenseConfig {
    pub vpc: usize,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub real_batch: usize,
    pub iterations: usize,
    pub insertion_mode: InsertionMode,
    pub criterion: Criterion,
    pub l2_threshold: f64,
    /// Per-video key cap; effective cap is min(max_keys, T).
    pub max_keys: usize,
    pub warmup_fraction: f64,
    pub cooldown_fraction: f64,
    pub check_period: usize,
    pub theta_mode: ThetaMode,
    /// Candidate gradients via α-weighted key gradients instead of the
    /// default independent-leaf probes.
    pub chain_rule_candidates: bool,
    /// Horizontal-flip augmentation on real batches. Off by default:
    /// two benchmark classes are direction-coded, so mirroring real
    /// videos blurs exactly the signal being matched.
    pub flip: bool,
    pub seed: u64,
}

impl Default for CondenseConfig {
    fn default() -> Self {
        CondenseConfig {
            vpc: 1,
            epsilon: 0.0,
            learning_rate: 1.0,
            momentum: 0.95,
            real_batch: 8,
            iterations: 150,
            insertion_mode: InsertionMode::GradientGuided,
            criterion: Criterion::Cosine,
            l2_threshold: 0.141,
            max_keys: usize::MAX,
            warmup_fraction: 0.2,
            cooldown_fraction: 0.2,
            check_period: 10,
            theta_mode: ThetaMode::FreshEachIteration,
            chain_rule_candidates: false,
            flip: false,
            seed: 0,
        }
    }
}

impl CondenseConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.vpc == 0 {
            return bad("vpc must be >= 1".into());
        }
        if self.real_batch == 0 {
            return bad("real batch must be >= 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !self.epsilon.is_finite() {
            return bad("epsilon must be finite".into());
        }
        if !(self.l2_threshold.is_finite() && self.l2_threshold > 0.0) {
            return bad(format!("l2 threshold {} must be positive", self.l2_threshold));
        }
        if self.max_keys < 2 {
            return bad("max keys must be >= 2 (endpoints are permanent)".into());
        }
        if let ThetaMode::PersistWithReset(0) = self.theta_mode {
            return bad("theta reset period must be >= 1".into());
        }
        // Schedule arithmetic shares the same validation.
        PhaseSchedule::new(
            self.iterations,
            self.warmup_fraction,
            self.cooldown_fraction,
            self.check_period,
        )?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<PhaseSchedule> {
        PhaseSchedule::new(
            self.iterations,
            self.warmup_fraction,
            self.cooldown_fraction,
            self.check_period,
        )
    }
}

/// Optimizer state of the outer loop: the current matching network and
/// one momentum buffer per key frame (parallel to each video's keys).
#[derive(Clone, Debug)]
pub struct MatcherState {
    pub theta: Params,
    pub momentum: Vec<Vec<Tensor>>,
}

impl MatcherState {
    pub fn new(theta: Params, videos: &[SparseVideo]) -> Self {
        let momentum = videos
            .iter()
            .map(|v| v.keys().iter().map(|k| Tensor::zeros(k.frame.shape())).collect())
            .collect();
        MatcherState { theta, momentum }
    }

    /// Momentum buffers mirror key-frame shapes exactly.
    pub fn mirrors(&self, videos: &[SparseVideo]) -> bool {
        self.momentum.len() == videos.len()
            && self.momentum.iter().zip(videos).all(|(bufs, v)| {
                bufs.len() == v.key_count()
                    && bufs
                        .iter()
                        .zip(v.keys())
                        .all(|(b, k)| b.shape() == k.frame.shape())
            })
    }
}

/// One committed frame insertion, with the misalignment evidence that
/// triggered it. In random-position mode the recorded cosines describe
/// the chosen position, which need not itself be eligible — eligibility
/// of some candidate is only the trigger there.
#[derive(Clone, Debug, PartialEq)]
pub struct InsertionEvent {
    pub iteration: usize,
    pub class: usize,
    pub video: usize,
    pub inserted: usize,
    pub left_key: usize,
    pub right_key: usize,
    pub cos_left: f64,
    pub cos_right: f64,
}

/// Fresh synthetic videos: VPC per class, keys at {0, T−1}, pixels
/// i.i.d. Gaussian (mean 0.5, σ 0.25) clamped to [0, 1].
pub fn init_synthetic(
    classes: usize,
    vpc: usize,
    geometry: Geometry,
    seed: u64,
) -> Result<Vec<SparseVideo>> {
    geometry.validate()?;
    if classes == 0 || vpc == 0 {
        return Err(Error::InvalidConfig(format!(
            "init_synthetic needs classes >= 1 and vpc >= 1, got {classes}, {vpc}"
        )));
    }
    let base = CounterRng::new(seed).derive(stream::SYN_INIT);
    let mut videos = Vec::with_capacity(classes * vpc);
    for class in 0..classes {
        for j in 0..vpc {
            let mut rng = base.derive(class as u64).derive(j as u64);
            let mut frame = || {
                let data = (0..geometry.frame_numel())
                    .map(|_| (0.5 + 0.25 * rng.gaussian()).clamp(0.0, 1.0) as f32)
                    .collect();
                Tensor::new(geometry.frame_shape().to_vec(), data)
            };
            let keys = vec![
                KeyFrame::new(0, frame()?),
                KeyFrame::new(geometry.t - 1, frame()?),
            ];
            videos.push(SparseVideo::new(class, geometry.t, keys)?);
        }
    }
    Ok(videos)
}

#[cfg(test)]
mod tests;
