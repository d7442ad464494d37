//! The condensation outer loop: fresh matching network per iteration,
//! gradient-matching step on the key frames, periodic insertion scans.

use super::graph_bind::{assemble_position_grads, matching_loss};
use super::insertion::{insertion_scan, ScanContext};
use super::{
    init_synthetic, CondenseConfig, InsertionEvent, InsertionMode, MatcherState, Phase,
    SparseVideo, ThetaMode,
};
use crate::error::{Error, Result};
use crate::models::{init_params, ModelSpec};
use crate::optim::momentum_step;
use crate::rng::{stream, CounterRng};
use crate::tensor::Tensor;
use crate::videogen::{sample_real_batch, VideoDataset};

#[derive(Clone, Debug)]
pub struct CondenseOutput {
    /// Final sparse videos, class-major order (videos[c·vpc + j]).
    pub videos: Vec<SparseVideo>,
    pub events: Vec<InsertionEvent>,
    /// Matching-loss value per iteration.
    pub loss_trace: Vec<f64>,
}

pub fn condense(
    cfg: &CondenseConfig,
    dataset: &VideoDataset,
    spec: &ModelSpec,
) -> Result<CondenseOutput> {
    cfg.validate()?;
    spec.validate()?;
    let classes = dataset.classes();
    if spec.classes != classes {
        return Err(Error::InvalidConfig(format!(
            "model expects {} classes, dataset has {}",
            spec.classes, classes
        )));
    }
    if spec.geometry != dataset.geometry {
        return Err(Error::InvalidConfig(format!(
            "model geometry {} != dataset geometry {}",
            spec.geometry, dataset.geometry
        )));
    }
    let schedule = cfg.schedule()?;
    let geom = dataset.geometry;
    let cap = cfg.max_keys.min(geom.t);
    let base = CounterRng::new(cfg.seed);
    let theta_seed = |iteration: usize| {
        base.derive(stream::THETA)
            .derive(iteration as u64)
            .next_u64()
    };

    let mut videos = init_synthetic(classes, cfg.vpc, geom, cfg.seed)?;
    let mut state = MatcherState::new(init_params(spec, theta_seed(0)), &videos);
    let mut events = Vec::new();
    let mut loss_trace = Vec::with_capacity(cfg.iterations);

    for iteration in 0..cfg.iterations {
        let phase = schedule.phase_of(iteration)?;
        match cfg.theta_mode {
            ThetaMode::FreshEachIteration => {
                state.theta = init_params(spec, theta_seed(iteration));
            }
            ThetaMode::PersistWithReset(period) => {
                if iteration % period == 0 {
                    state.theta = init_params(spec, theta_seed(iteration));
                }
            }
        }

        let mut real = Vec::with_capacity(classes);
        for class in 0..classes {
            let mut rng = base
                .derive(stream::REAL_BATCH)
                .derive(iteration as u64)
                .derive(class as u64);
            real.push(sample_real_batch(
                dataset,
                class,
                cfg.real_batch,
                &mut rng,
                cfg.flip,
            )?);
        }

        let mut g = crate::autograd::Graph::new();
        let mg = matching_loss(&mut g, spec, &state.theta, &videos, &real)?;
        for (class, &term) in mg.class_terms.iter().enumerate() {
            if !g.value(term).item().is_finite() {
                return Err(Error::NumericAbort { iteration, class });
            }
        }
        loss_trace.push(g.value(mg.loss).item() as f64);

        let scanning = phase == Phase::Insertion
            && cfg.insertion_mode != InsertionMode::Disabled
            && iteration % cfg.check_period == 0;

        // One backward pass serves both the pixel updates (key-leaf
        // adjoints) and, on scan iterations, the per-position probes
        // (slot adjoints).
        let mut wrt = Vec::new();
        for binding in &mg.bindings {
            wrt.extend_from_slice(&binding.key_leaves);
        }
        let key_total = wrt.len();
        if scanning {
            for binding in &mg.bindings {
                wrt.extend_from_slice(&binding.slots);
            }
        }
        let grads = g.backward(mg.loss, &wrt)?;
        let (key_grads, slot_grads) = grads.split_at(key_total);

        debug_assert!(state.mirrors(&videos));
        let mut offset = 0;
        for (vi, video) in videos.iter_mut().enumerate() {
            let n = video.key_count();
            for (slot, grad) in key_grads[offset..offset + n].iter().enumerate() {
                momentum_step(
                    video.key_frame_mut(slot),
                    &mut state.momentum[vi][slot],
                    grad,
                    cfg.learning_rate,
                    cfg.momentum,
                );
            }
            offset += n;
        }

        if scanning {
            // Scans read this iteration's gradients; commits follow in
            // (class, video) order. New keys start at the current
            // (post-update) interpolated value with zero momentum.
            let mut key_off = 0;
            let mut slot_off = 0;
            let mut pending: Vec<(usize, InsertionEvent)> = Vec::new();
            for (vi, video) in videos.iter().enumerate() {
                let keys = &key_grads[key_off..key_off + video.key_count()];
                let slots = &slot_grads[slot_off..slot_off + video.horizon];
                key_off += video.key_count();
                slot_off += video.horizon;
                if video.key_count() >= cap {
                    continue;
                }
                let positions =
                    assemble_position_grads(video, keys, slots, cfg.chain_rule_candidates)?;
                let ctx = ScanContext {
                    iteration,
                    class: video.label,
                    video: vi - video.label * cfg.vpc,
                };
                let mut rng = base
                    .derive(stream::INSERTION)
                    .derive(iteration as u64)
                    .derive(ctx.class as u64)
                    .derive(ctx.video as u64);
                if let Some(event) = insertion_scan(video, &positions, cfg, ctx, &mut rng)? {
                    pending.push((vi, event));
                }
            }
            for (vi, event) in pending {
                let frame = videos[vi].interpolated_frame(event.inserted)?;
                let shape = frame.shape().to_vec();
                let position = videos[vi].insert_key(event.inserted, frame)?;
                state.momentum[vi].insert(position, Tensor::zeros(&shape));
                events.push(event);
            }
        }
    }

    Ok(CondenseOutput {
        videos,
        events,
        loss_trace,
    })
}
