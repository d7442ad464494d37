//! Evaluation harness: expands condensed videos into dense training
//! sets, trains fresh classifiers on them, scores top-1 accuracy on the
//! real held-out test split, accounts storage, and aggregates everything
//! into the method × architecture report.
//!
//! Accuracy bookkeeping is integer-first: every run records (correct,
//! total) per class, so the per-class accuracies average — weighted by
//! class size — to the headline number exactly, with no float drift.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::autograd::Graph;
use crate::condenser::{interpolate, SparseVideo};
use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::models::{forward, init_params, Architecture, ModelSpec, Params};
use crate::optim;
use crate::rng::{stream, CounterRng};
use crate::tensor::Tensor;
use crate::videogen::{flipped_h, Video, VideoDataset};

// ───────────────────────────── protocol ─────────────────────────────

/// How evaluation models are trained and how many of them.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalProtocol {
    /// Epochs over the (small) training set. Zero is allowed and means
    /// "score the untrained model" — the chance-level sanity probe.
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch: usize,
    /// Independent trainings per report cell; the headline is their mean.
    pub repeats: usize,
    /// Horizontal-flip augmentation (p = ½) on training batches.
    pub flip: bool,
    /// Channel widths of the evaluation models.
    pub widths: (usize, usize),
    pub architectures: Vec<Architecture>,
    /// Root of the evaluation seed stream.
    pub seed: u64,
}

impl Default for EvalProtocol {
    /// Desk-scale defaults; full-scale runs raise `epochs` to 500 via
    /// config.
    fn default() -> Self {
        EvalProtocol {
            epochs: 100,
            learning_rate: 1e-2,
            momentum: 0.95,
            batch: 32,
            repeats: 3,
            flip: true,
            widths: (8, 16),
            architectures: vec![Architecture::Conv3dMicro],
            seed: 0,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.batch == 0 {
            return bad("evaluation batch size must be positive");
        }
        if self.repeats == 0 {
            return bad("evaluation repeat count must be positive");
        }
        if self.architectures.is_empty() {
            return bad("evaluation needs at least one architecture");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("evaluation learning rate must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("evaluation momentum must lie in [0, 1)");
        }
        Ok(())
    }
}

// ───────────────────────────── expansion ─────────────────────────────

/// Expand sparse videos into dense [T, H, W, C] training videos using
/// the same interpolation routine the condenser optimizes through.
/// Pixels are clamped to [0, 1] at export time; the stored key frames
/// themselves stay raw.
pub fn expand_condensed(videos: &[SparseVideo]) -> Result<Vec<Video>> {
    videos
        .iter()
        .map(|v| {
            Ok(Video {
                frames: interpolate(v)?.clamped(0.0, 1.0),
                label: v.label,
            })
        })
        .collect()
}

// ───────────────────────────── training ─────────────────────────────

/// One trained-model measurement.
#[derive(Clone, Debug)]
pub struct EvalRun {
    /// Top-1 accuracy on the real test split.
    pub accuracy: f64,
    /// (correct, total) per class. Their weighted average reproduces
    /// `accuracy` exactly since both come from the same integer counts.
    pub per_class: Vec<(usize, usize)>,
}

/// Train a fresh model on `train` and score it on the real test split of
/// `dataset`. Everything — initialization, shuffling, flips — derives
/// from `seed`, so equal seeds give bit-equal accuracies.
pub fn train_and_test(
    train: &[Video],
    dataset: &VideoDataset,
    protocol: &EvalProtocol,
    architecture: Architecture,
    seed: u64,
) -> Result<EvalRun> {
    if train.is_empty() {
        return Err(Error::InvalidConfig(
            "evaluation training set is empty".into(),
        ));
    }
    protocol.validate()?;
    let geom = dataset.geometry;
    let classes = dataset.classes();
    let spec = ModelSpec::new(architecture, protocol.widths, classes, geom)?;
    for v in train {
        if v.frames.shape() != geom.video_shape() {
            return Err(Error::ShapeMismatch {
                op: "evaluation training video",
                left: geom.video_shape().to_vec(),
                right: v.frames.shape().to_vec(),
            });
        }
        if v.label >= classes {
            return Err(Error::UnknownClass(v.label));
        }
    }

    let base = CounterRng::new(seed);
    let mut params = init_params(&spec, base.derive(stream::THETA).next_u64());
    let mut momentum: Vec<Tensor> = params.tensors().map(|t| Tensor::zeros(t.shape())).collect();

    for epoch in 0..protocol.epochs {
        let mut rng = base.derive(stream::EVAL).derive(epoch as u64);
        let order = rng.sample_without_replacement(train.len(), train.len());
        for chunk in order.chunks(protocol.batch) {
            let mut data = Vec::with_capacity(chunk.len() * geom.video_numel());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let v = &train[i];
                if protocol.flip && rng.bernoulli(0.5) {
                    data.extend(flipped_h(v.frames.data(), &geom));
                } else {
                    data.extend_from_slice(v.frames.data());
                }
                labels.push(v.label);
            }
            let batch = Tensor::new(geom.batch_shape(chunk.len()).to_vec(), data)?;
            let mut g = Graph::new();
            let ids = params.bind(&mut g);
            let input = g.data(batch);
            let logits = forward(&mut g, &spec, &ids, input)?;
            let loss = g.softmax_cross_entropy(logits, &labels)?;
            if !g.value(loss).item().is_finite() {
                return Err(Error::NonFinite {
                    context: format!("evaluation training loss at epoch {epoch}"),
                });
            }
            let grads = g.backward(loss, &ids)?;
            for ((value, buf), grad) in params.tensors_mut().zip(&mut momentum).zip(&grads) {
                optim::momentum_step(value, buf, grad, protocol.learning_rate, protocol.momentum);
            }
        }
    }
    test_accuracy(&params, &spec, dataset, protocol.batch)
}

/// Top-1 accuracy of `params` on the real test split, tallied per class.
/// Argmax ties resolve to the lowest class id.
fn test_accuracy(
    params: &Params,
    spec: &ModelSpec,
    dataset: &VideoDataset,
    batch: usize,
) -> Result<EvalRun> {
    let geom = dataset.geometry;
    let classes = dataset.classes();
    let mut per_class = vec![(0usize, 0usize); classes];
    for (c, videos) in dataset.test.iter().enumerate() {
        for chunk in videos.chunks(batch.max(1)) {
            let mut data = Vec::with_capacity(chunk.len() * geom.video_numel());
            for v in chunk {
                data.extend_from_slice(v.frames.data());
            }
            let mut g = Graph::new();
            let ids = params.bind(&mut g);
            let input = g.data(Tensor::new(geom.batch_shape(chunk.len()).to_vec(), data)?);
            let logits = forward(&mut g, spec, &ids, input)?;
            let values = g.value(logits).data();
            for row in 0..chunk.len() {
                let scores = &values[row * classes..(row + 1) * classes];
                let pred = scores
                    .iter()
                    .enumerate()
                    .fold(0usize, |best, (i, &s)| if s > scores[best] { i } else { best });
                per_class[c].1 += 1;
                per_class[c].0 += (pred == c) as usize;
            }
        }
    }
    let correct: usize = per_class.iter().map(|p| p.0).sum();
    let total: usize = per_class.iter().map(|p| p.1).sum();
    if total == 0 {
        return Err(Error::InvalidConfig("real test split is empty".into()));
    }
    Ok(EvalRun {
        accuracy: correct as f64 / total as f64,
        per_class,
    })
}

// ───────────────────────────── storage ─────────────────────────────

/// The storage bill for a stored training set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StorageAccount {
    /// Retained frames: keys only for sparse videos, full T for dense.
    pub frames: usize,
    /// Headline bytes: frames · H · W · C · 4 (float32 pixels).
    pub bytes: usize,
    /// Key-index overhead, 4 bytes per stored key — reported separately,
    /// never folded into the headline.
    pub index_bytes: usize,
}

/// Storage of sparse key-frame videos.
pub fn sparse_storage(videos: &[SparseVideo], geom: &Geometry) -> StorageAccount {
    let frames: usize = videos.iter().map(SparseVideo::key_count).sum();
    StorageAccount {
        frames,
        bytes: frames * geom.frame_numel() * 4,
        index_bytes: 4 * frames,
    }
}

/// Storage of `video_count` densely stored real videos (coresets, the
/// whole-dataset row).
pub fn dense_storage(video_count: usize, geom: &Geometry) -> StorageAccount {
    let frames = video_count * geom.t;
    StorageAccount {
        frames,
        bytes: frames * geom.frame_numel() * 4,
        index_bytes: 0,
    }
}

// ───────────────────────────── report ─────────────────────────────

/// One row source: a named training set plus its storage bill and the
/// per-class retained-frame histogram.
#[derive(Clone, Debug)]
pub struct MethodArm {
    pub name: String,
    pub train: Vec<Video>,
    pub storage: StorageAccount,
    pub frames_per_class: Vec<usize>,
}

fn checked_name(name: &str) -> Result<String> {
    if name.is_empty() || name.contains(',') || name.contains('\n') {
        return Err(Error::InvalidConfig(format!(
            "method name '{name}' must be non-empty and free of commas/newlines"
        )));
    }
    Ok(name.to_string())
}

impl MethodArm {
    /// Arm backed by condensed sparse videos.
    pub fn condensed(
        name: &str,
        videos: &[SparseVideo],
        classes: usize,
        geom: &Geometry,
    ) -> Result<MethodArm> {
        let mut hist = vec![0usize; classes];
        for v in videos {
            if v.label >= classes {
                return Err(Error::UnknownClass(v.label));
            }
            hist[v.label] += v.key_count();
        }
        Ok(MethodArm {
            name: checked_name(name)?,
            train: expand_condensed(videos)?,
            storage: sparse_storage(videos, geom),
            frames_per_class: hist,
        })
    }

    /// Arm backed by real videos stored densely (coreset selections or
    /// the whole-dataset upper bound).
    pub fn dense(name: &str, videos: Vec<Video>, classes: usize, geom: &Geometry) -> Result<MethodArm> {
        let mut hist = vec![0usize; classes];
        for v in &videos {
            if v.label >= classes {
                return Err(Error::UnknownClass(v.label));
            }
            hist[v.label] += geom.t;
        }
        Ok(MethodArm {
            name: checked_name(name)?,
            storage: dense_storage(videos.len(), geom),
            train: videos,
            frames_per_class: hist,
        })
    }
}

/// One method × architecture cell of the report.
#[derive(Clone, Debug)]
pub struct EvalCell {
    pub method: String,
    pub architecture: Architecture,
    /// Per-repeat top-1 accuracies in seed order.
    pub accuracies: Vec<f64>,
    /// (correct, total) per class, summed across repeats.
    pub per_class: Vec<(usize, usize)>,
    pub storage: StorageAccount,
}

impl EvalCell {
    pub fn mean(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }

    /// Sample standard deviation over the repeats; 0 for a single run.
    pub fn std(&self) -> f64 {
        let n = self.accuracies.len();
        if n <= 1 {
            return 0.0;
        }
        let m = self.mean();
        let ss: f64 = self.accuracies.iter().map(|a| (a - m) * (a - m)).sum();
        (ss / (n - 1) as f64).sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub cells: Vec<EvalCell>,
    /// One row per cell: method, architecture, seed-group, accuracy
    /// mean/std, frames, headline bytes, index bytes.
    pub summary_csv: String,
    /// Per-class retained-frame histogram, one row per (method, class).
    pub class_frames_csv: String,
}

/// Evaluate every method × architecture cell with `repeats` independent
/// trainings each. Seeds derive from (method, architecture, repeat)
/// indices, so results are identical no matter how cells are scheduled.
pub fn full_report(
    arms: &[MethodArm],
    dataset: &VideoDataset,
    protocol: &EvalProtocol,
) -> Result<EvalReport> {
    full_report_jobs(arms, dataset, protocol, 1)
}

/// `full_report` with the single trainings fanned out over up to `jobs`
/// threads. Every training is a pure function of its (method,
/// architecture, repeat) index, so the merged report is byte-identical
/// to the serial one.
pub fn full_report_jobs(
    arms: &[MethodArm],
    dataset: &VideoDataset,
    protocol: &EvalProtocol,
    jobs: usize,
) -> Result<EvalReport> {
    protocol.validate()?;
    let base = CounterRng::new(protocol.seed).derive(stream::EVAL);
    let archs = protocol.architectures.len();
    let per_arm = archs * protocol.repeats;
    let runs = crate::par::parallel_map(jobs, arms.len() * per_arm, |k| {
        let (mi, rest) = (k / per_arm, k % per_arm);
        let (ai, r) = (rest / protocol.repeats, rest % protocol.repeats);
        let seed = base
            .derive(mi as u64)
            .derive(ai as u64)
            .derive(r as u64)
            .next_u64();
        train_and_test(
            &arms[mi].train,
            dataset,
            protocol,
            protocol.architectures[ai],
            seed,
        )
    })?;

    let mut cells = Vec::with_capacity(arms.len() * archs);
    let mut runs = runs.into_iter();
    for arm in arms {
        for &arch in &protocol.architectures {
            let mut accuracies = Vec::with_capacity(protocol.repeats);
            let mut per_class = vec![(0usize, 0usize); dataset.classes()];
            for run in runs.by_ref().take(protocol.repeats) {
                accuracies.push(run.accuracy);
                for (sum, one) in per_class.iter_mut().zip(run.per_class) {
                    sum.0 += one.0;
                    sum.1 += one.1;
                }
            }
            cells.push(EvalCell {
                method: arm.name.clone(),
                architecture: arch,
                accuracies,
                per_class,
                storage: arm.storage,
            });
        }
    }

    let mut summary = String::from(
        "method,architecture,seed-group,accuracy-mean,accuracy-std,frames-total,bytes,index-bytes\n",
    );
    for cell in &cells {
        writeln!(
            summary,
            "{},{},{}x{},{:.6},{:.6},{},{},{}",
            cell.method,
            cell.architecture.id(),
            protocol.seed,
            protocol.repeats,
            cell.mean(),
            cell.std(),
            cell.storage.frames,
            cell.storage.bytes,
            cell.storage.index_bytes,
        )
        .expect("writing to a String cannot fail");
    }
    let mut hist = String::from("method,class,frames\n");
    for arm in arms {
        for (c, n) in arm.frames_per_class.iter().enumerate() {
            writeln!(hist, "{},{},{}", arm.name, c, n).expect("writing to a String cannot fail");
        }
    }
    Ok(EvalReport {
        cells,
        summary_csv: summary,
        class_frames_csv: hist,
    })
}

// ───────────────────────────── frame dumps ─────────────────────────────

/// Export every key frame as a binary P6 pixmap (8-bit, export-clamped)
/// named `class{label}_video{v}_index{t}.ppm`, where `v` counts videos
/// within their class. Single-channel content is replicated across RGB.
/// Returns the paths written.
pub fn export_frames_ppm(
    videos: &[SparseVideo],
    geom: &Geometry,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut within_class = std::collections::HashMap::new();
    let mut paths = Vec::new();
    for video in videos {
        let v = within_class.entry(video.label).or_insert(0usize);
        for key in video.keys() {
            let path = dir.join(format!(
                "class{}_video{}_index{}.ppm",
                video.label, v, key.index
            ));
            let mut out = format!("P6\n{} {}\n255\n", geom.w, geom.h).into_bytes();
            let frame = key.frame.data();
            for y in 0..geom.h {
                for x in 0..geom.w {
                    let px = (y * geom.w + x) * geom.c;
                    for ch in 0..3 {
                        let value = frame[px + ch.min(geom.c - 1)];
                        out.push((value.clamp(0.0, 1.0) * 255.0).round() as u8);
                    }
                }
            }
            crate::bytes::write_file(&path, &out)?;
            paths.push(path);
        }
        *v += 1;
    }
    Ok(paths)
}

// ───────────────────────────── data isolation ─────────────────────────────

/// FNV-1a over the frame tensor's f32 bit pattern.
pub fn fingerprint(frames: &Tensor) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for v in frames.data() {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// Isolation check: a synthetic training set must not contain any video
/// byte-identical to a real training video. Coreset arms are subsets of
/// the real train split by design and are expected to fail this check.
pub fn isolated_from_real_train(train: &[Video], dataset: &VideoDataset) -> bool {
    let real: BTreeSet<u64> = dataset
        .train
        .iter()
        .flatten()
        .map(|v| fingerprint(&v.frames))
        .collect();
    train.iter().all(|v| !real.contains(&fingerprint(&v.frames)))
}
