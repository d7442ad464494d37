//! Coreset selection baselines — random, herding, k-center — and the
//! single-knob ablation matrix.
//!
//! Herding and k-center run in an embedding space produced by a fixed,
//! randomly initialized conv3d-micro (never trained); the space is named
//! in the selection so results are reproducible from the dataset alone.
//! All selectors are deterministic: score ties break to the lowest video
//! index.

use std::fmt::Write as _;

use crate::autograd::Graph;
use crate::condenser::{CondenseConfig, Criterion, InsertionMode, ThetaMode};
use crate::error::{Error, Result};
use crate::models::{embed, init_params, Architecture, ModelSpec};
use crate::rng::{stream, CounterRng};
use crate::tensor::Tensor;
use crate::videogen::{Video, VideoDataset};

// ───────────────────────────── selections ─────────────────────────────

/// One selected video: its index within the class's train split and the
/// score of the greedy step that chose it (0 for random selection).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pick {
    pub index: usize,
    pub score: f64,
}

/// A per-class coreset: `per_class[c]` holds exactly VPC picks, unique
/// within the class, in pick order.
#[derive(Clone, Debug)]
pub struct CoresetSelection {
    pub method: &'static str,
    /// Identifier of the embedding space used ("none" for random).
    pub feature_space: String,
    pub per_class: Vec<Vec<Pick>>,
}

impl CoresetSelection {
    fn new(
        method: &'static str,
        feature_space: String,
        per_class: Vec<Vec<Pick>>,
        vpc: usize,
    ) -> Result<Self> {
        for (class, picks) in per_class.iter().enumerate() {
            if picks.len() != vpc {
                return Err(Error::InvalidConfig(format!(
                    "class {class}: {} picks, expected VPC {vpc}",
                    picks.len()
                )));
            }
            let mut seen: Vec<usize> = picks.iter().map(|p| p.index).collect();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != picks.len() {
                return Err(Error::InvalidConfig(format!(
                    "class {class}: duplicate indices in coreset"
                )));
            }
        }
        Ok(CoresetSelection {
            method,
            feature_space,
            per_class,
        })
    }

    /// Materialize the selected real videos, class-major in pick order.
    pub fn videos(&self, dataset: &VideoDataset) -> Result<Vec<Video>> {
        let mut out = Vec::new();
        for (class, picks) in self.per_class.iter().enumerate() {
            let pool = dataset
                .train
                .get(class)
                .ok_or(Error::UnknownClass(class))?;
            for p in picks {
                let v = pool.get(p.index).ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "class {class}: selected index {} out of range ({} videos)",
                        p.index,
                        pool.len()
                    ))
                })?;
                out.push(v.clone());
            }
        }
        Ok(out)
    }

    /// One row per pick: class id, pick rank, video index, score.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,rank,video-index,score\n");
        for (class, picks) in self.per_class.iter().enumerate() {
            for (rank, p) in picks.iter().enumerate() {
                writeln!(out, "{class},{rank},{},{:.6}", p.index, p.score)
                    .expect("writing to a String cannot fail");
            }
        }
        out
    }
}

fn check_vpc(dataset: &VideoDataset, vpc: usize) -> Result<()> {
    if vpc == 0 {
        return Err(Error::InvalidConfig("coreset VPC must be >= 1".into()));
    }
    for (class, pool) in dataset.train.iter().enumerate() {
        if vpc > pool.len() {
            return Err(Error::OversizedBatch {
                class,
                requested: vpc,
                available: pool.len(),
            });
        }
    }
    Ok(())
}

/// Uniform without-replacement selection per class, drawn from the
/// coreset stream of `seed`.
pub fn random_coreset(dataset: &VideoDataset, vpc: usize, seed: u64) -> Result<CoresetSelection> {
    check_vpc(dataset, vpc)?;
    let base = CounterRng::new(seed).derive(stream::CORESET);
    let per_class = dataset
        .train
        .iter()
        .enumerate()
        .map(|(class, pool)| {
            let mut rng = base.derive(class as u64);
            rng.sample_without_replacement(pool.len(), vpc)
                .into_iter()
                .map(|index| Pick { index, score: 0.0 })
                .collect()
        })
        .collect();
    CoresetSelection::new("random", format!("none(seed={seed})"), per_class, vpc)
}

// ───────────────────────────── features ─────────────────────────────

/// Per-video embeddings for selection: `per_class[c][i]` is the w1-dim
/// vector of train video i of class c.
#[derive(Clone, Debug)]
pub struct Features {
    pub space: String,
    pub per_class: Vec<Vec<Vec<f32>>>,
}

/// Embed every train video with a fixed randomly initialized
/// conv3d-micro, seeded under the feature stream. The network is never
/// trained; the space id records widths and seed.
pub fn selection_features(dataset: &VideoDataset, seed: u64) -> Result<Features> {
    let geom = dataset.geometry;
    let widths = (8, 16);
    let spec = ModelSpec::new(Architecture::Conv3dMicro, widths, dataset.classes(), geom)?;
    let params = init_params(&spec, CounterRng::new(seed).derive(stream::FEATURES).next_u64());
    let mut per_class = Vec::with_capacity(dataset.classes());
    for pool in &dataset.train {
        let mut class_feats = Vec::with_capacity(pool.len());
        for chunk in pool.chunks(32) {
            let mut data = Vec::with_capacity(chunk.len() * geom.video_numel());
            for v in chunk {
                data.extend_from_slice(v.frames.data());
            }
            let mut g = Graph::new();
            let ids = params.bind(&mut g);
            let input = g.data(Tensor::new(geom.batch_shape(chunk.len()).to_vec(), data)?);
            let feats = embed(&mut g, &spec, &ids, input)?;
            let width = g.shape(feats)[1];
            let values = g.value(feats).data();
            for row in 0..chunk.len() {
                class_feats.push(values[row * width..(row + 1) * width].to_vec());
            }
        }
        per_class.push(class_feats);
    }
    Ok(Features {
        space: format!(
            "conv3d-micro({},{})-seed{seed}",
            widths.0, widths.1
        ),
        per_class,
    })
}

// ───────────────────────────── greedy selectors ─────────────────────────────

// Selection math runs in f64 end to end: quantizing the class mean to
// f32 is enough to flip argmins between near-tied candidates.

pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn widen(points: &[Vec<f32>]) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|p| p.iter().map(|&v| v as f64).collect())
        .collect()
}

pub(crate) fn class_mean(points: &[Vec<f64>]) -> Vec<f64> {
    let dim = points[0].len();
    let mut mean = vec![0.0f64; dim];
    for p in points {
        for (m, &v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= points.len() as f64;
    }
    mean
}

fn all_points_equal(points: &[Vec<f32>]) -> bool {
    points.windows(2).all(|w| w[0] == w[1])
}

/// Greedy mean matching: each step picks the unchosen point minimizing
/// ‖class mean − mean(chosen ∪ {x})‖; the pick's score is that residual.
/// Ties break to the lowest index, which on all-equal (degenerate)
/// features reduces to index order.
pub(crate) fn herding_order(points: &[Vec<f64>], k: usize) -> Vec<Pick> {
    let mean = class_mean(points);
    let dim = mean.len();
    let mut chosen = vec![false; points.len()];
    let mut sum = vec![0.0f64; dim];
    let mut picks = Vec::with_capacity(k);
    for step in 1..=k {
        let mut best: Option<Pick> = None;
        for (i, p) in points.iter().enumerate() {
            if chosen[i] {
                continue;
            }
            let residual = (0..dim)
                .map(|d| {
                    let gap = mean[d] - (sum[d] + p[d]) / step as f64;
                    gap * gap
                })
                .sum::<f64>()
                .sqrt();
            if best.map_or(true, |b| residual < b.score) {
                best = Some(Pick {
                    index: i,
                    score: residual,
                });
            }
        }
        let pick = best.expect("k <= points.len() checked by the caller");
        chosen[pick.index] = true;
        for (s, &v) in sum.iter_mut().zip(&points[pick.index]) {
            *s += v;
        }
        picks.push(pick);
    }
    picks
}

/// Greedy max-min cover: the first center is the point nearest the class
/// mean (scored by that distance); every later center maximizes its
/// minimum distance to the chosen set (scored by that distance). Ties
/// break to the lowest index.
pub(crate) fn kcenter_order(points: &[Vec<f64>], k: usize) -> Vec<Pick> {
    let mean = class_mean(points);
    let mut picks: Vec<Pick> = Vec::with_capacity(k);
    let mut chosen = vec![false; points.len()];
    for step in 0..k {
        let mut best: Option<Pick> = None;
        for (i, p) in points.iter().enumerate() {
            if chosen[i] {
                continue;
            }
            let score = if step == 0 {
                euclid(p, &mean)
            } else {
                picks
                    .iter()
                    .map(|c| euclid(p, &points[c.index]))
                    .fold(f64::INFINITY, f64::min)
            };
            let better = match best {
                None => true,
                // First center minimizes, later centers maximize; strict
                // comparison keeps the lowest index on ties.
                Some(b) if step == 0 => score < b.score,
                Some(b) => score > b.score,
            };
            if better {
                best = Some(Pick { index: i, score });
            }
        }
        let pick = best.expect("k <= points.len() checked by the caller");
        chosen[pick.index] = true;
        picks.push(pick);
    }
    picks
}

fn greedy_coreset(
    method: &'static str,
    dataset: &VideoDataset,
    vpc: usize,
    features: &Features,
    order: fn(&[Vec<f64>], usize) -> Vec<Pick>,
) -> Result<CoresetSelection> {
    check_vpc(dataset, vpc)?;
    if features.per_class.len() != dataset.classes() {
        return Err(Error::InvalidConfig(format!(
            "features cover {} classes, dataset has {}",
            features.per_class.len(),
            dataset.classes()
        )));
    }
    let mut per_class = Vec::with_capacity(dataset.classes());
    for (class, points) in features.per_class.iter().enumerate() {
        if points.len() != dataset.train[class].len() {
            return Err(Error::InvalidConfig(format!(
                "class {class}: {} feature rows for {} train videos",
                points.len(),
                dataset.train[class].len()
            )));
        }
        if all_points_equal(points) {
            log::warn!(
                "class {class}: degenerate all-equal features, {method} falls back to index order"
            );
        }
        per_class.push(order(&widen(points), vpc));
    }
    CoresetSelection::new(method, features.space.clone(), per_class, vpc)
}

/// Herding baseline over the selection feature space.
pub fn herding_coreset(
    dataset: &VideoDataset,
    vpc: usize,
    features: &Features,
) -> Result<CoresetSelection> {
    greedy_coreset("herding", dataset, vpc, features, herding_order)
}

/// K-center baseline over the selection feature space. `_seed` is
/// accepted for interface parity with the other selectors but never
/// influences the output: the first center is pinned to the class mean
/// and ties break to the lowest index, so selection is fully
/// deterministic given (dataset, features).
pub fn kcenter_coreset(
    dataset: &VideoDataset,
    vpc: usize,
    features: &Features,
    _seed: u64,
) -> Result<CoresetSelection> {
    greedy_coreset("k-center", dataset, vpc, features, kcenter_order)
}

// ───────────────────────────── ablation matrix ─────────────────────────────

/// The single-knob ablation variants, paired with report tags. Requires
/// a full default-shaped base (gradient-guided, cosine, both schedule
/// phases, fresh θ, probe candidates, no flip) so that every variant
/// differs from the base in exactly one field.
pub fn ablation_matrix(base: &CondenseConfig) -> Result<Vec<(&'static str, CondenseConfig)>> {
    base.validate()?;
    let full_prism = base.insertion_mode == InsertionMode::GradientGuided
        && base.criterion == Criterion::Cosine
        && base.warmup_fraction > 0.0
        && base.cooldown_fraction > 0.0
        && base.theta_mode == ThetaMode::FreshEachIteration
        && !base.chain_rule_candidates
        && !base.flip;
    if !full_prism {
        return Err(Error::InvalidConfig(
            "ablation matrix needs the full configuration as base \
             (gradient-guided, cosine, warm-up and cool-down active, fresh theta, \
             probe candidates, no flip)"
                .into(),
        ));
    }
    let with = |f: &dyn Fn(&mut CondenseConfig)| {
        let mut cfg = base.clone();
        f(&mut cfg);
        cfg
    };
    Ok(vec![
        ("base", base.clone()),
        ("no-insertion", with(&|c| c.insertion_mode = InsertionMode::Disabled)),
        ("random-position", with(&|c| c.insertion_mode = InsertionMode::RandomPosition)),
        ("l2-distance", with(&|c| c.criterion = Criterion::L2)),
        ("no-warmup", with(&|c| c.warmup_fraction = 0.0)),
        ("no-cooldown", with(&|c| c.cooldown_fraction = 0.0)),
        ("chain-rule-candidates", with(&|c| c.chain_rule_candidates = true)),
        ("persist-theta", with(&|c| c.theta_mode = ThetaMode::PersistWithReset(50))),
        ("flip-real", with(&|c| c.flip = true)),
    ])
}
