//! The frame-insertion decision: gradient-misalignment eligibility,
//! candidate selection, and the loss-descent-blockage check that
//! justifies the trigger.

use super::{CondenseConfig, Criterion, InsertionEvent, InsertionMode, SparseVideo};
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tensor::{dot_f64, norm_f64, Tensor};

/// Where a scan happens, for the event record.
#[derive(Clone, Copy, Debug)]
pub struct ScanContext {
    pub iteration: usize,
    pub class: usize,
    pub video: usize,
}

struct Candidate {
    t: usize,
    left: usize,
    right: usize,
    cos_left: f64,
    cos_right: f64,
}

impl Candidate {
    fn score(&self) -> f64 {
        self.cos_left.max(self.cos_right)
    }

    fn eligible(&self, cfg: &CondenseConfig) -> bool {
        match cfg.criterion {
            // Strict inequality: a boundary cosine of exactly ε is
            // ineligible.
            Criterion::Cosine => self.cos_left < cfg.epsilon && self.cos_right < cfg.epsilon,
            // ‖â − b̂‖ on unit vectors equals √(2 − 2cos), so the
            // distance test reduces to the cosines already in hand.
            Criterion::L2 => {
                let dist = |c: f64| (2.0 - 2.0 * c).max(0.0).sqrt();
                dist(self.cos_left) > cfg.l2_threshold && dist(self.cos_right) > cfg.l2_threshold
            }
        }
    }
}

fn cosine(a: &[f32], b: &[f32]) -> Option<f64> {
    let (na, nb) = (norm_f64(a), norm_f64(b));
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(dot_f64(a, b) / (na * nb))
    }
}

/// Pick at most one frame to insert into `video`, given the per-position
/// loss gradients (`grads[t]`, length T). Gradient-guided mode takes the
/// eligible candidate with the lowest max-cosine (ties to the lowest t);
/// random-position mode uses eligibility only as the trigger and draws
/// the position uniformly from the whole candidate pool. Candidates with
/// a zero-norm gradient on any side are skipped (cosine undefined) and
/// logged. The caller commits the returned event.
pub fn insertion_scan(
    video: &SparseVideo,
    grads: &[Tensor],
    cfg: &CondenseConfig,
    ctx: ScanContext,
    rng: &mut CounterRng,
) -> Result<Option<InsertionEvent>> {
    if cfg.insertion_mode == InsertionMode::Disabled {
        return Ok(None);
    }
    if grads.len() != video.horizon {
        return Err(Error::BadShape {
            op: "insertion_scan",
            expected: format!("{} per-position gradients", video.horizon),
            shape: vec![grads.len()],
        });
    }
    if video.key_count() >= cfg.max_keys.min(video.horizon) {
        return Ok(None);
    }

    let mut pool = Vec::new();
    for t in 0..video.horizon {
        if video.is_key(t) {
            continue;
        }
        let (left, right) = video.flanking_keys(t)?;
        let g_t = grads[t].data();
        match (cosine(g_t, grads[left].data()), cosine(g_t, grads[right].data())) {
            (Some(cos_left), Some(cos_right)) => pool.push(Candidate {
                t,
                left,
                right,
                cos_left,
                cos_right,
            }),
            _ => log::warn!(
                "iteration {}, class {}, video {}: zero-norm gradient at t={}, candidate skipped",
                ctx.iteration,
                ctx.class,
                ctx.video,
                t
            ),
        }
    }
    if !pool.iter().any(|c| c.eligible(cfg)) {
        return Ok(None);
    }

    let chosen = match cfg.insertion_mode {
        InsertionMode::GradientGuided => pool
            .iter()
            .filter(|c| c.eligible(cfg))
            // Strict < keeps the first (lowest-t) candidate on ties.
            .fold(None::<&Candidate>, |best, c| match best {
                Some(b) if c.score() >= b.score() => Some(b),
                _ => Some(c),
            })
            .unwrap(),
        InsertionMode::RandomPosition => &pool[rng.below(pool.len())],
        InsertionMode::Disabled => unreachable!(),
    };
    Ok(Some(InsertionEvent {
        iteration: ctx.iteration,
        class: ctx.class,
        video: ctx.video,
        inserted: chosen.t,
        left_key: chosen.left,
        right_key: chosen.right,
        cos_left: chosen.cos_left,
        cos_right: chosen.cos_right,
    }))
}

/// λ grid of n evenly spaced samples over [0, 1], endpoints included.
pub fn lambda_grid(n: usize) -> Vec<f64> {
    assert!(n >= 2, "grid needs both endpoints");
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Executable check of the loss-descent-blockage lemma: when a candidate
/// gradient g_t has negative inner product with both flanking key
/// gradients, every descent direction available to the keys alone —
/// v = λ(−g_i) + (1−λ)(−g_{i+1}), λ ∈ [0,1] — has ⟨g_t, v⟩ > 0, i.e.
/// it *increases* the loss at the candidate. Returns true iff that holds
/// at every sampled λ; by the lemma it always must.
pub fn verify_blockage(
    g_t: &[f64],
    g_i: &[f64],
    g_i1: &[f64],
    lambdas: &[f64],
) -> Result<bool> {
    for (name, v) in [("g_i", g_i), ("g_i1", g_i1)] {
        if v.len() != g_t.len() {
            return Err(Error::BadShape {
                op: "verify_blockage",
                expected: format!("{name} of dimension {}", g_t.len()),
                shape: vec![v.len()],
            });
        }
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let (di, di1) = (dot(g_t, g_i), dot(g_t, g_i1));
    if di >= 0.0 || di1 >= 0.0 {
        return Err(Error::BlockagePrecondition { gi: di, gi1: di1 });
    }
    for &lambda in lambdas {
        let v: Vec<f64> = g_i
            .iter()
            .zip(g_i1)
            .map(|(&a, &b)| lambda * -a + (1.0 - lambda) * -b)
            .collect();
        if dot(g_t, &v) <= 0.0 {
            return Ok(false);
        }
    }
    Ok(true)
}
