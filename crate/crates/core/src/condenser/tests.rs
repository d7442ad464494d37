use super::*;
use crate::autograd::Graph;
use crate::error::Error;
use crate::geometry::Geometry;
use crate::models::{init_params, Architecture, ModelSpec};
use crate::rng::CounterRng;
use crate::tensor::Tensor;
use crate::videogen::{self, MotionLaw, MotionProgram, SpriteKind, VideoDataset};

fn const_frame(shape: &[usize], v: f32) -> Tensor {
    Tensor::filled(shape, v)
}

fn video_with_keys(label: usize, horizon: usize, entries: &[(usize, Tensor)]) -> SparseVideo {
    let keys = entries
        .iter()
        .map(|(i, f)| KeyFrame::new(*i, f.clone()))
        .collect();
    SparseVideo::new(label, horizon, keys).unwrap()
}

fn tiny_geometry() -> Geometry {
    Geometry::new(4, 12, 12, 1)
}

fn tiny_dataset(seed: u64) -> VideoDataset {
    let programs = vec![
        MotionProgram::new(
            0,
            "drift",
            SpriteKind::Square,
            MotionLaw::LinearTranslate { vx: -0.8, vy: 0.0 },
        ),
        MotionProgram::new(
            1,
            "jump",
            SpriteKind::Disk,
            MotionLaw::HoldThenJump { hold_fraction: 0.5 },
        ),
    ];
    videogen::generate(&programs, 4, 2, tiny_geometry(), seed).unwrap()
}

fn tiny_spec() -> ModelSpec {
    ModelSpec::new(Architecture::Conv3dMicro, (2, 3), 2, tiny_geometry()).unwrap()
}

fn tiny_config() -> CondenseConfig {
    CondenseConfig {
        vpc: 1,
        learning_rate: 0.05,
        real_batch: 2,
        iterations: 10,
        check_period: 2,
        seed: 7,
        ..CondenseConfig::default()
    }
}

// ───────────────────────── init_synthetic ─────────────────────────

#[test]
fn init_places_endpoint_keys_only() {
    let videos = init_synthetic(6, 1, Geometry::desk(), 3).unwrap();
    assert_eq!(videos.len(), 6);
    let mut stored = 0;
    for (i, v) in videos.iter().enumerate() {
        assert_eq!(v.label, i);
        assert_eq!(v.key_indices(), vec![0, 7]);
        stored += v.key_count();
    }
    assert_eq!(stored, 6 * 2);
}

#[test]
fn init_pixels_follow_clamped_gaussian() {
    // 6 classes x 11 videos x 2 frames x 768 pixels > 1e5 samples.
    let videos = init_synthetic(6, 11, Geometry::desk(), 2026).unwrap();
    let mut sum = 0.0f64;
    let mut count = 0usize;
    let (mut lo, mut hi) = (0usize, 0usize);
    for v in &videos {
        for k in v.keys() {
            for &p in k.frame.data() {
                assert!((0.0..=1.0).contains(&p));
                sum += p as f64;
                count += 1;
                lo += (p == 0.0) as usize;
                hi += (p == 1.0) as usize;
            }
        }
    }
    assert!(count >= 100_000, "{count} samples");
    let mean = sum / count as f64;
    assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    // The clamp tails (|z| > 2) must both be populated.
    assert!(lo > 0 && hi > 0);
}

#[test]
fn init_is_seed_deterministic() {
    let a = init_synthetic(3, 2, tiny_geometry(), 5).unwrap();
    let b = init_synthetic(3, 2, tiny_geometry(), 5).unwrap();
    let c = init_synthetic(3, 2, tiny_geometry(), 6).unwrap();
    let flat = |vs: &[SparseVideo]| -> Vec<f32> {
        vs.iter()
            .flat_map(|v| v.keys().iter().flat_map(|k| k.frame.data().iter().copied()))
            .collect()
    };
    assert_eq!(flat(&a), flat(&b));
    assert_ne!(flat(&a), flat(&c));
}

// ───────────────────────── interpolation ─────────────────────────

#[test]
fn interpolation_matches_blend_arithmetic() {
    // Keys at 0 and 4 valued 0 and 8: t=1 has α=0.75, value 2.
    let shape = [1, 1, 2];
    let v = video_with_keys(
        0,
        5,
        &[(0, const_frame(&shape, 0.0)), (4, const_frame(&shape, 8.0))],
    );
    let dense = interpolate(&v).unwrap();
    assert_eq!(dense.shape(), &[5, 1, 1, 2]);
    let frame = |t: usize| &dense.data()[t * 2..(t + 1) * 2];
    assert_eq!(frame(1), &[2.0, 2.0]);
    assert_eq!(frame(2), &[4.0, 4.0]);
    assert_eq!(frame(3), &[6.0, 6.0]);
}

#[test]
fn interpolation_copies_keys_bit_exactly() {
    let shape = [2, 2, 1];
    let mut rng = CounterRng::new(9);
    let mut noisy = || {
        Tensor::new(
            shape.to_vec(),
            (0..4).map(|_| rng.uniform(-1.0, 2.0) as f32).collect(),
        )
        .unwrap()
    };
    let (f0, f2, f7) = (noisy(), noisy(), noisy());
    let v = video_with_keys(1, 8, &[(0, f0.clone()), (2, f2.clone()), (7, f7.clone())]);
    let dense = interpolate(&v).unwrap();
    let frame = |t: usize| &dense.data()[t * 4..(t + 1) * 4];
    assert_eq!(frame(0), f0.data());
    assert_eq!(frame(2), f2.data());
    assert_eq!(frame(7), f7.data());
}

#[test]
fn interpolation_assigns_segments_by_flanking_keys() {
    // Keys {0, 2, 7}: position 1 blends (0,2); positions 3..=6 blend
    // (2,7) and must not involve key 0 at all.
    let shape = [1, 1, 1];
    let v = video_with_keys(
        0,
        8,
        &[
            (0, const_frame(&shape, 1e6)),
            (2, const_frame(&shape, 2.0)),
            (7, const_frame(&shape, 12.0)),
        ],
    );
    assert_eq!(v.flanking_keys(1).unwrap(), (0, 2));
    for t in 3..=6 {
        assert_eq!(v.flanking_keys(t).unwrap(), (2, 7));
    }
    let dense = interpolate(&v).unwrap();
    assert_eq!(dense.data()[1], (1e6 + 2.0) / 2.0);
    for t in 3..=6 {
        let alpha = (7 - t) as f32 / 5.0;
        let expect = alpha * 2.0 + (1.0 - alpha) * 12.0;
        assert!((dense.data()[t] - expect).abs() < 1e-4, "t={t}");
    }
}

#[test]
fn interpolation_property_over_random_key_sets() {
    let mut rng = CounterRng::new(41);
    for case in 0..1000 {
        let horizon = 2 + rng.below(14);
        let mut indices = vec![0, horizon - 1];
        for t in 1..horizon.saturating_sub(1) {
            if rng.bernoulli(0.4) {
                indices.push(t);
            }
        }
        indices.sort_unstable();
        indices.dedup();
        // Left pixel in [1.5, 2), right pixel in [0, 0.5): denominators
        // for coefficient recovery stay >= 1.
        let entries: Vec<(usize, Tensor)> = indices
            .iter()
            .map(|&i| {
                let hi = rng.uniform(1.5, 2.0) as f32;
                let lo = rng.uniform(0.0, 0.5) as f32;
                (i, Tensor::new(vec![1, 1, 2], vec![hi, lo]).unwrap())
            })
            .collect();
        let v = video_with_keys(0, horizon, &entries);
        let dense = interpolate(&v).unwrap();
        let frame = |t: usize| &dense.data()[t * 2..(t + 1) * 2];

        for (i, f) in &entries {
            assert_eq!(frame(*i), f.data(), "case {case}: key {i} not bit-exact");
        }
        for t in 0..horizon {
            if v.is_key(t) {
                continue;
            }
            let (l, r) = v.flanking_keys(t).unwrap();
            let alpha = (r - t) as f64 / (r - l) as f64;
            assert!(alpha > 0.0 && alpha < 1.0, "interior α must be strict");
            // The engine's coefficients must match the closed-form α.
            let (a, b) = blend_coefficients(t, l, r);
            assert!((a as f64 - alpha).abs() <= 1e-6, "case {case} t={t}");
            assert!((b as f64 - (1.0 - alpha)).abs() <= 1e-6);
            // And the stored frame must be that convex combination.
            let (fl, fr) = (frame(l).to_vec(), frame(r).to_vec());
            let ft = frame(t);
            for px in 0..2 {
                let expect = alpha * fl[px] as f64 + (1.0 - alpha) * fr[px] as f64;
                assert!(
                    (ft[px] as f64 - expect).abs() <= 1e-6,
                    "case {case} t={t} px={px}: {} vs {expect}",
                    ft[px]
                );
            }
        }
    }
}

#[test]
fn sparse_video_invariants_are_enforced() {
    let f = || const_frame(&[1, 1, 1], 0.5);
    let key = |i: usize| KeyFrame::new(i, f());
    assert!(SparseVideo::new(0, 8, vec![key(1), key(7)]).is_err());
    assert!(SparseVideo::new(0, 8, vec![key(0), key(5)]).is_err());
    assert!(SparseVideo::new(0, 8, vec![key(0)]).is_err());
    assert!(SparseVideo::new(0, 8, vec![]).is_err());

    let mut v = video_with_keys(0, 8, &[(0, f()), (7, f())]);
    assert!(v.insert_key(0, f()).is_err());
    assert!(v.insert_key(7, f()).is_err());
    assert!(v.insert_key(9, f()).is_err());
    v.insert_key(3, f()).unwrap();
    assert!(v.insert_key(3, f()).is_err(), "duplicate index");
    assert_eq!(v.key_indices(), vec![0, 3, 7]);
    assert!(v.insert_key(1, const_frame(&[2, 1, 1], 0.0)).is_err());
}

// ───────────────────────── matching loss ─────────────────────────

/// A sparse video whose every frame is a key, copied from a dense
/// [T, H, W, C] tensor.
fn all_key_video(label: usize, dense: &Tensor) -> SparseVideo {
    let t_len = dense.shape()[0];
    let frame_shape = dense.shape()[1..].to_vec();
    let n: usize = frame_shape.iter().product();
    let entries: Vec<(usize, Tensor)> = (0..t_len)
        .map(|t| {
            let data = dense.data()[t * n..(t + 1) * n].to_vec();
            (t, Tensor::new(frame_shape.clone(), data).unwrap())
        })
        .collect();
    video_with_keys(label, t_len, &entries)
}

#[test]
fn matching_loss_is_exactly_zero_when_syn_equals_real() {
    let ds = tiny_dataset(11);
    let spec = tiny_spec();
    let theta = init_params(&spec, 99);
    let geom = ds.geometry;

    // Synthetic = the first train video of each class, stored key-by-key;
    // real batch = the same single video. Identical inputs and shared θ
    // make both parameter gradients bitwise equal.
    let videos: Vec<SparseVideo> = (0..2)
        .map(|c| all_key_video(c, &ds.train[c][0].frames))
        .collect();
    let real: Vec<Tensor> = (0..2)
        .map(|c| {
            ds.train[c][0]
                .frames
                .reshaped(&geom.batch_shape(1))
                .unwrap()
        })
        .collect();

    let mut g = Graph::new();
    let mg = matching_loss(&mut g, &spec, &theta, &videos, &real).unwrap();
    assert_eq!(g.value(mg.loss).item(), 0.0);
    for &term in &mg.class_terms {
        assert_eq!(g.value(term).item(), 0.0);
    }
}

#[test]
fn matching_loss_is_nonnegative_and_differentiable() {
    let ds = tiny_dataset(13);
    let spec = tiny_spec();
    let theta = init_params(&spec, 5);
    let videos = init_synthetic(2, 1, ds.geometry, 3).unwrap();
    let mut rng = CounterRng::new(8);
    let real: Vec<Tensor> = (0..2)
        .map(|c| videogen::sample_real_batch(&ds, c, 2, &mut rng, false).unwrap())
        .collect();

    let mut g = Graph::new();
    let mg = matching_loss(&mut g, &spec, &theta, &videos, &real).unwrap();
    let loss = g.value(mg.loss).item();
    assert!(loss > 0.0, "distinct batches should not match exactly");

    // Gradients reach every key frame with the right shape.
    let wrt: Vec<_> = mg
        .bindings
        .iter()
        .flat_map(|b| b.key_leaves.iter().copied())
        .collect();
    let grads = g.backward(mg.loss, &wrt).unwrap();
    assert_eq!(grads.len(), 4);
    assert!(grads.iter().any(|t| t.sq_norm() > 0.0));
    for t in &grads {
        assert_eq!(t.shape(), &[12, 12, 1]);
    }
}

#[test]
fn matching_loss_rejects_misordered_videos() {
    let ds = tiny_dataset(17);
    let spec = tiny_spec();
    let theta = init_params(&spec, 1);
    let mut videos = init_synthetic(2, 1, ds.geometry, 3).unwrap();
    videos.swap(0, 1);
    let real: Vec<Tensor> = (0..2)
        .map(|c| {
            ds.train[c][0]
                .frames
                .reshaped(&ds.geometry.batch_shape(1))
                .unwrap()
        })
        .collect();
    let mut g = Graph::new();
    assert!(matches!(
        matching_loss(&mut g, &spec, &theta, &videos, &real),
        Err(Error::InvalidConfig(_))
    ));
}

// ───────────────────────── frame gradients ─────────────────────────

#[test]
fn untouched_positions_get_zero_gradients() {
    // Loss reads only the t=0 slice of the video row, so every other
    // position's probe gradient — and the final key's total — is zero.
    let shape = [2, 2, 1];
    let video = video_with_keys(
        0,
        4,
        &[(0, const_frame(&shape, 0.3)), (3, const_frame(&shape, 0.9))],
    );
    let mut g = Graph::new();
    let binding = super::graph_bind::bind_video(&mut g, &video).unwrap();
    let head = g.slice_axis(binding.row, 1, 0, 1).unwrap();
    let loss = g.sum_all(head).unwrap();

    let grads = frame_gradients(&mut g, loss, &video, &binding, false).unwrap();
    assert_eq!(grads.len(), 4);
    for t in 0..4 {
        assert_eq!(grads[t].numel(), 4, "flattened length H*W*C");
    }
    assert!(grads[0].data().iter().all(|&v| v == 1.0));
    for t in 1..4 {
        assert!(
            grads[t].data().iter().all(|&v| v == 0.0),
            "position {t} is untouched"
        );
    }
}

#[test]
fn key_totals_decompose_into_alpha_weighted_probes() {
    // Smooth loss Σ x⁴ over the whole row; the key gradient must equal
    // its own slot partial plus α-weighted neighbor partials.
    let shape = [2, 1, 1];
    let mut rng = CounterRng::new(21);
    let mut noisy = || {
        Tensor::new(
            shape.to_vec(),
            (0..2).map(|_| rng.uniform(0.2, 1.0) as f32).collect(),
        )
        .unwrap()
    };
    let video = video_with_keys(0, 6, &[(0, noisy()), (3, noisy()), (5, noisy())]);
    let mut g = Graph::new();
    let binding = super::graph_bind::bind_video(&mut g, &video).unwrap();
    let sq = g.mul(binding.row, binding.row).unwrap();
    let loss = g.sq_l2_norm(sq).unwrap();

    let mut wrt = binding.key_leaves.clone();
    wrt.extend_from_slice(&binding.slots);
    let grads = g.backward(loss, &wrt).unwrap();
    let (key_grads, slot_grads) = grads.split_at(binding.key_leaves.len());

    for (pos, key) in video.keys().iter().enumerate() {
        let mut expect = slot_grads[key.index].clone();
        for t in 0..video.horizon {
            if video.is_key(t) {
                continue;
            }
            let (l, r) = video.flanking_keys(t).unwrap();
            let (a, b) = blend_coefficients(t, l, r);
            if l == key.index {
                expect.axpy(a, &slot_grads[t]);
            } else if r == key.index {
                expect.axpy(b, &slot_grads[t]);
            }
        }
        for (x, y) in key_grads[pos].data().iter().zip(expect.data()) {
            assert!(
                (x - y).abs() <= 1e-4 * x.abs().max(y.abs()).max(1e-3),
                "key {}: total {x} vs decomposition {y}",
                key.index
            );
        }
    }

    // frame_gradients: keys map to totals, interiors to probes, and the
    // chain-rule variant blends the flanking totals instead.
    let by_position = frame_gradients(&mut g, loss, &video, &binding, false).unwrap();
    for (pos, key) in video.keys().iter().enumerate() {
        assert_eq!(by_position[key.index].data(), key_grads[pos].data());
    }
    for t in 0..video.horizon {
        if !video.is_key(t) {
            assert_eq!(by_position[t].data(), slot_grads[t].data());
        }
    }
    let chained = frame_gradients(&mut g, loss, &video, &binding, true).unwrap();
    for t in 0..video.horizon {
        if video.is_key(t) {
            assert_eq!(chained[t].data(), by_position[t].data());
            continue;
        }
        let (l, r) = video.flanking_keys(t).unwrap();
        let (a, b) = blend_coefficients(t, l, r);
        let mut expect = by_position[l].clone();
        expect.scale(a);
        expect.axpy(b, &by_position[r]);
        assert_eq!(chained[t].data(), expect.data());
    }
}

#[test]
fn probe_gradients_predict_loss_change_to_first_order() {
    let shape = [2, 2, 1];
    let mut rng = CounterRng::new(31);
    let mut noisy = |lo: f64, hi: f64| {
        Tensor::new(
            shape.to_vec(),
            (0..4).map(|_| rng.uniform(lo, hi) as f32).collect(),
        )
        .unwrap()
    };
    let entries = [(0, noisy(0.3, 1.0)), (2, noisy(0.3, 1.0)), (4, noisy(0.3, 1.0))];
    let video = video_with_keys(0, 5, &entries);
    let build_loss = |v: &SparseVideo| -> f64 {
        let mut g = Graph::new();
        let b = super::graph_bind::bind_video(&mut g, v).unwrap();
        let sq = g.mul(b.row, b.row).unwrap();
        let loss = g.sq_l2_norm(sq).unwrap();
        g.value(loss).item() as f64
    };

    let mut g = Graph::new();
    let binding = super::graph_bind::bind_video(&mut g, &video).unwrap();
    let sq = g.mul(binding.row, binding.row).unwrap();
    let loss = g.sq_l2_norm(sq).unwrap();
    let probes = g.backward(loss, &binding.slots).unwrap();

    // Perturb every key by ε·d; the induced slot perturbations are the
    // interpolated d's, and Σ_t ⟨probe_t, δx_t⟩ must match the central
    // difference of the loss.
    let eps = 1e-3f32;
    let dirs: Vec<Tensor> = (0..3).map(|_| noisy(-1.0, 1.0)).collect();
    let shifted = |sign: f32| {
        let entries: Vec<(usize, Tensor)> = video
            .keys()
            .iter()
            .zip(&dirs)
            .map(|(k, d)| {
                let mut f = k.frame.clone();
                f.axpy(sign * eps, d);
                (k.index, f)
            })
            .collect();
        video_with_keys(0, 5, &entries)
    };
    let fd = (build_loss(&shifted(1.0)) - build_loss(&shifted(-1.0))) / (2.0 * eps as f64);

    let dir_video = video_with_keys(0, 5, &[
        (0, dirs[0].clone()),
        (2, dirs[1].clone()),
        (4, dirs[2].clone()),
    ]);
    let dense_dirs = interpolate(&dir_video).unwrap();
    let mut predicted = 0.0f64;
    let n = 4;
    for t in 0..5 {
        let slot_dir = &dense_dirs.data()[t * n..(t + 1) * n];
        predicted += probes[t]
            .data()
            .iter()
            .zip(slot_dir)
            .map(|(&gp, &d)| gp as f64 * d as f64)
            .sum::<f64>();
    }
    let rel = (fd - predicted).abs() / fd.abs().max(predicted.abs()).max(1e-9);
    assert!(rel < 1e-2, "fd {fd} vs predicted {predicted} (rel {rel})");
}

// ───────────────────────── insertion scan ─────────────────────────

fn grad_video(horizon: usize, keys: &[usize]) -> SparseVideo {
    let entries: Vec<(usize, Tensor)> = keys
        .iter()
        .map(|&i| (i, const_frame(&[1, 1, 2], 0.5)))
        .collect();
    video_with_keys(0, horizon, &entries)
}

fn scan_with(
    video: &SparseVideo,
    grads: &[[f32; 2]],
    cfg: &CondenseConfig,
) -> Option<InsertionEvent> {
    let tensors: Vec<Tensor> = grads
        .iter()
        .map(|g| Tensor::from_vec(g.to_vec()))
        .collect();
    let ctx = ScanContext {
        iteration: 40,
        class: 1,
        video: 0,
    };
    let mut rng = CounterRng::new(3);
    insertion_scan(video, &tensors, cfg, ctx, &mut rng).unwrap()
}

#[test]
fn doubly_negative_cosine_triggers_insertion() {
    let video = grad_video(3, &[0, 2]);
    let cfg = tiny_config();
    let event = scan_with(&video, &[[-1.0, 0.0], [1.0, 1.0], [0.0, -1.0]], &cfg).unwrap();
    assert_eq!(event.inserted, 1);
    assert_eq!((event.left_key, event.right_key), (0, 2));
    let expect = -1.0 / 2f64.sqrt();
    assert!((event.cos_left - expect).abs() < 1e-12);
    assert!((event.cos_right - expect).abs() < 1e-12);
    assert_eq!((event.iteration, event.class, event.video), (40, 1, 0));
}

#[test]
fn boundary_cosine_is_ineligible_at_zero_epsilon() {
    // cos against the right key is exactly 0, and Eq. 5 is strict.
    let video = grad_video(3, &[0, 2]);
    let cfg = tiny_config();
    assert!(scan_with(&video, &[[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0]], &cfg).is_none());
}

#[test]
fn scan_picks_the_most_negative_max_cosine() {
    let video = grad_video(5, &[0, 4]);
    let cfg = tiny_config();
    // Unit candidate gradients against key gradients e_x and e_y give
    // max-cosine scores -0.2, -0.7, -0.5: the middle one wins.
    let event = scan_with(
        &video,
        &[
            [1.0, 0.0],
            [-0.2, -0.9798],
            [-0.7, -0.7141],
            [-0.5, -0.8660],
            [0.0, 1.0],
        ],
        &cfg,
    )
    .unwrap();
    assert_eq!(event.inserted, 2);
    assert!((event.cos_left - -0.7).abs() < 1e-3);
}

#[test]
fn equal_scores_break_ties_toward_the_lowest_index() {
    let video = grad_video(4, &[0, 3]);
    let cfg = tiny_config();
    let event = scan_with(
        &video,
        &[[1.0, 0.0], [-0.5, -0.866], [-0.866, -0.5], [0.0, 1.0]],
        &cfg,
    )
    .unwrap();
    // Scores are max(-0.5,-0.866) = -0.5 at t=1 and max(-0.866,-0.5) =
    // -0.5 at t=2: the tie goes to t=1.
    assert_eq!(event.inserted, 1);
}

#[test]
fn zero_norm_candidates_are_skipped() {
    let video = grad_video(4, &[0, 3]);
    let cfg = tiny_config();
    // t=1 has a zero gradient (cosine undefined) but t=2 still inserts.
    let event = scan_with(
        &video,
        &[[-1.0, 0.0], [0.0, 0.0], [0.6, 0.6], [0.0, -1.0]],
        &cfg,
    )
    .unwrap();
    assert_eq!(event.inserted, 2);

    // All candidates zero: nothing to insert.
    assert!(scan_with(&video, &[[-1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, -1.0]], &cfg).is_none());
}

#[test]
fn l2_criterion_uses_unit_normalized_distance() {
    let video = grad_video(4, &[0, 3]);
    let mut cfg = tiny_config();
    cfg.criterion = Criterion::L2;
    // cos 0.999 → distance 0.045 < 0.141: ineligible. cos 0.5 →
    // distance 1.0 > 0.141: eligible even though the cosine is positive.
    let event = scan_with(
        &video,
        &[[1.0, 0.0], [0.999, 0.0447], [0.5, 0.866], [0.0, 1.0]],
        &cfg,
    )
    .unwrap();
    assert_eq!(event.inserted, 2);
    assert!((event.cos_left - 0.5).abs() < 1e-3);
}

#[test]
fn random_position_draws_from_the_whole_pool_once_triggered() {
    let video = grad_video(5, &[0, 4]);
    let mut cfg = tiny_config();
    cfg.insertion_mode = InsertionMode::RandomPosition;
    // Only t=1 is eligible; t=2 and t=3 are aligned with the keys.
    let grads: Vec<Tensor> = [
        [-1.0f32, 0.0],
        [0.7, 0.7],
        [-0.9, -0.9],
        [0.8, 0.8],
        [0.0, -1.0],
    ]
    .iter()
    .map(|g| Tensor::from_vec(g.to_vec()))
    .collect();
    let ctx = ScanContext {
        iteration: 0,
        class: 0,
        video: 0,
    };
    let mut seen = std::collections::HashSet::new();
    for s in 0..200 {
        let mut rng = CounterRng::new(s);
        let event = insertion_scan(&video, &grads, &cfg, ctx, &mut rng)
            .unwrap()
            .expect("an eligible candidate exists, so the scan must fire");
        seen.insert(event.inserted);
    }
    assert_eq!(
        seen,
        [1usize, 2, 3].into_iter().collect(),
        "uniform draw must cover the whole candidate pool"
    );

    // Without any eligible candidate the trigger never fires.
    let aligned: Vec<Tensor> = [[1.0f32, 0.0], [0.9, 0.1], [0.8, 0.2], [0.7, 0.3], [0.0, 1.0]]
        .iter()
        .map(|g| Tensor::from_vec(g.to_vec()))
        .collect();
    let mut rng = CounterRng::new(0);
    assert!(insertion_scan(&video, &aligned, &cfg, ctx, &mut rng)
        .unwrap()
        .is_none());
}

#[test]
fn scan_respects_the_key_cap_and_disabled_mode() {
    let video = grad_video(3, &[0, 2]);
    let eligible = [[-1.0f32, 0.0], [1.0, 1.0], [0.0, -1.0]];

    let mut capped = tiny_config();
    capped.max_keys = 2;
    assert!(scan_with(&video, &eligible, &capped).is_none());

    let mut off = tiny_config();
    off.insertion_mode = InsertionMode::Disabled;
    assert!(scan_with(&video, &eligible, &off).is_none());
}

// ───────────────────────── blockage lemma ─────────────────────────

#[test]
fn blockage_holds_on_the_worked_examples() {
    let lambdas = [0.0, 0.5, 1.0];
    assert!(verify_blockage(&[1.0, 1.0], &[-1.0, 0.0], &[0.0, -1.0], &lambdas).unwrap());
    assert!(verify_blockage(&[2.0, 0.0], &[-1.0, 1.0], &[-1.0, -1.0], &lambdas).unwrap());
}

#[test]
fn blockage_precondition_violations_are_errors() {
    let lambdas = lambda_grid(3);
    let err = verify_blockage(&[1.0, 0.0], &[1.0, 0.0], &[-1.0, 0.0], &lambdas).unwrap_err();
    match err {
        Error::BlockagePrecondition { gi, gi1 } => {
            assert!(gi >= 0.0);
            assert!(gi1 < 0.0);
        }
        other => panic!("wrong error {other}"),
    }
    assert!(verify_blockage(&[1.0], &[1.0, 2.0], &[-1.0], &lambdas).is_err());
}

#[test]
fn blockage_lemma_survives_random_triples() {
    let mut rng = CounterRng::new(2026);
    let lambdas = lambda_grid(11);
    assert_eq!(lambdas[0], 0.0);
    assert_eq!(*lambdas.last().unwrap(), 1.0);
    let mut tested = 0;
    while tested < 2000 {
        let dim = 32;
        let sample = |rng: &mut CounterRng| -> Vec<f64> {
            (0..dim).map(|_| rng.gaussian()).collect()
        };
        let g_t = sample(&mut rng);
        let mut g_i = sample(&mut rng);
        let mut g_i1 = sample(&mut rng);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        // Flip signs to satisfy the precondition; skip near-orthogonal
        // draws where roundoff could blur the sign.
        if dot(&g_t, &g_i) > 0.0 {
            g_i.iter_mut().for_each(|v| *v = -*v);
        }
        if dot(&g_t, &g_i1) > 0.0 {
            g_i1.iter_mut().for_each(|v| *v = -*v);
        }
        if dot(&g_t, &g_i).abs() <= 1e-9 || dot(&g_t, &g_i1).abs() <= 1e-9 {
            continue;
        }
        assert!(
            verify_blockage(&g_t, &g_i, &g_i1, &lambdas).unwrap(),
            "lemma violated at case {tested}"
        );
        tested += 1;
    }
}

// ───────────────────────── phase schedule ─────────────────────────

#[test]
fn phase_boundaries_match_floor_ceil_arithmetic() {
    let s = PhaseSchedule::new(100, 0.2, 0.2, 10).unwrap();
    for it in 0..20 {
        assert_eq!(s.phase_of(it).unwrap(), Phase::WarmUp, "it={it}");
    }
    for it in 20..80 {
        assert_eq!(s.phase_of(it).unwrap(), Phase::Insertion, "it={it}");
    }
    for it in 80..100 {
        assert_eq!(s.phase_of(it).unwrap(), Phase::CoolDown, "it={it}");
    }

    let small = PhaseSchedule::new(10, 0.2, 0.2, 1).unwrap();
    let phases: Vec<Phase> = (0..10).map(|it| small.phase_of(it).unwrap()).collect();
    assert_eq!(&phases[..2], &[Phase::WarmUp, Phase::WarmUp]);
    assert!(phases[2..8].iter().all(|&p| p == Phase::Insertion));
    assert_eq!(&phases[8..], &[Phase::CoolDown, Phase::CoolDown]);
}

#[test]
fn zeroed_fractions_remove_their_phase() {
    let s = PhaseSchedule::new(50, 0.0, 0.2, 1).unwrap();
    assert_eq!(s.phase_of(0).unwrap(), Phase::Insertion);
    let s = PhaseSchedule::new(50, 0.2, 0.0, 1).unwrap();
    assert_eq!(s.phase_of(49).unwrap(), Phase::Insertion);
}

#[test]
fn schedule_rejects_bad_arguments() {
    assert!(PhaseSchedule::new(0, 0.2, 0.2, 1).is_err());
    assert!(PhaseSchedule::new(10, 0.2, 0.2, 0).is_err());
    assert!(PhaseSchedule::new(10, 0.5, 0.5, 1).is_err());
    assert!(PhaseSchedule::new(10, -0.1, 0.2, 1).is_err());
    let s = PhaseSchedule::new(10, 0.2, 0.2, 1).unwrap();
    assert!(matches!(
        s.phase_of(10),
        Err(Error::IterationOutOfRange { iteration: 10, total: 10 })
    ));
}

// ───────────────────────── condense loop ─────────────────────────

#[test]
fn disabled_insertion_keeps_exactly_two_keys() {
    let ds = tiny_dataset(19);
    let mut cfg = tiny_config();
    cfg.insertion_mode = InsertionMode::Disabled;
    let out = condense(&cfg, &ds, &tiny_spec()).unwrap();
    assert_eq!(out.videos.len(), 2);
    assert!(out.events.is_empty());
    assert_eq!(out.loss_trace.len(), cfg.iterations);
    for v in &out.videos {
        assert_eq!(v.key_indices(), vec![0, 3]);
    }
    assert!(out.loss_trace.iter().all(|l| l.is_finite()));
}

#[test]
fn condense_is_deterministic_and_class_ordered() {
    let ds = tiny_dataset(23);
    let mut cfg = tiny_config();
    cfg.vpc = 2;
    let spec = tiny_spec();
    let a = condense(&cfg, &ds, &spec).unwrap();
    let b = condense(&cfg, &ds, &spec).unwrap();

    assert_eq!(a.loss_trace, b.loss_trace);
    assert_eq!(a.events, b.events);
    let flat = |o: &CondenseOutput| -> Vec<f32> {
        o.videos
            .iter()
            .flat_map(|v| v.keys().iter().flat_map(|k| k.frame.data().iter().copied()))
            .collect()
    };
    assert_eq!(flat(&a), flat(&b), "final frames must be bit-identical");

    for (i, v) in a.videos.iter().enumerate() {
        assert_eq!(v.label, i / cfg.vpc, "class-major output order");
        assert_eq!(v.horizon, 4);
    }
}

#[test]
fn insertions_stay_inside_the_schedule_and_the_cap() {
    // The strict-cosine trigger is a rare tail event (key totals contain
    // an α-weighted copy of each candidate probe, flooring the cosine
    // well above zero), so this end-to-end check runs the L2 criterion
    // with a permissive threshold to make the trigger fire reliably.
    let spec = tiny_spec();
    let dist = |c: f64| (2.0 - 2.0 * c).max(0.0).sqrt();
    let mut total_events = 0;
    for seed in [1u64, 2, 3] {
        let ds = tiny_dataset(100 + seed);
        let mut cfg = tiny_config();
        cfg.seed = seed;
        cfg.iterations = 20;
        cfg.check_period = 1;
        cfg.max_keys = 3;
        cfg.criterion = Criterion::L2;
        cfg.l2_threshold = 0.05;
        let out = condense(&cfg, &ds, &spec).unwrap();
        let schedule = cfg.schedule().unwrap();
        for e in &out.events {
            assert_eq!(schedule.phase_of(e.iteration).unwrap(), Phase::Insertion);
            assert!(dist(e.cos_left) > cfg.l2_threshold);
            assert!(dist(e.cos_right) > cfg.l2_threshold);
            assert!(e.inserted > 0 && e.inserted < 4 - 1);
            assert!(e.left_key < e.inserted && e.inserted < e.right_key);
        }
        for (vi, v) in out.videos.iter().enumerate() {
            assert!(v.key_count() <= 3, "cap exceeded");
            let events_here = out
                .events
                .iter()
                .filter(|e| e.class * cfg.vpc + e.video == vi)
                .count();
            assert_eq!(v.key_count(), 2 + events_here);
            let idx = v.key_indices();
            assert_eq!(*idx.first().unwrap(), 0);
            assert_eq!(*idx.last().unwrap(), 3);
        }
        total_events += out.events.len();
    }
    // Liveness: with the permissive threshold the trigger must actually
    // fire somewhere across seeds, or the machinery is dead end to end.
    assert!(total_events > 0, "no insertion across three seeded runs");
}

#[test]
fn exploding_learning_rate_aborts_with_diagnostics() {
    let ds = tiny_dataset(29);
    let mut cfg = tiny_config();
    cfg.learning_rate = 1e30;
    match condense(&cfg, &ds, &tiny_spec()) {
        Err(Error::NumericAbort { iteration, class }) => {
            assert!(iteration >= 1, "first loss is finite, abort comes later");
            assert!(class < 2);
        }
        other => panic!("expected NumericAbort, got {other:?}"),
    }
}

#[test]
fn theta_persistence_and_chain_rule_modes_run() {
    let ds = tiny_dataset(33);
    let spec = tiny_spec();
    let mut cfg = tiny_config();
    cfg.theta_mode = ThetaMode::PersistWithReset(4);
    cfg.chain_rule_candidates = true;
    let out = condense(&cfg, &ds, &spec).unwrap();
    assert_eq!(out.loss_trace.len(), cfg.iterations);
    assert!(out.loss_trace.iter().all(|l| l.is_finite()));
}

#[test]
fn condense_rejects_mismatched_shapes() {
    let ds = tiny_dataset(37);
    let spec = ModelSpec::new(Architecture::Conv3dMicro, (2, 3), 3, tiny_geometry()).unwrap();
    assert!(matches!(
        condense(&tiny_config(), &ds, &spec),
        Err(Error::InvalidConfig(_))
    ));
    let spec = ModelSpec::new(Architecture::Conv3dMicro, (2, 3), 2, Geometry::desk()).unwrap();
    assert!(matches!(
        condense(&tiny_config(), &ds, &spec),
        Err(Error::InvalidConfig(_))
    ));
}

#[test]
fn matcher_state_mirrors_key_shapes() {
    let videos = init_synthetic(2, 1, tiny_geometry(), 1).unwrap();
    let state = MatcherState::new(init_params(&tiny_spec(), 0), &videos);
    assert!(state.mirrors(&videos));
    let mut grown = videos.clone();
    grown[0]
        .insert_key(2, const_frame(&[12, 12, 1], 0.0))
        .unwrap();
    assert!(!state.mirrors(&grown));
}

// ───────────────────────── container ─────────────────────────

#[test]
fn condensed_container_round_trips_raw_values() {
    let dir = std::env::temp_dir().join(format!("pvsc-rt-{}", std::process::id()));
    let path = dir.join("set.pvsc");
    let geom = tiny_geometry();
    // Deliberately out-of-range pixels: storage must not clamp.
    let mut v0 = video_with_keys(
        0,
        4,
        &[
            (0, const_frame(&[12, 12, 1], -0.5)),
            (3, const_frame(&[12, 12, 1], 1.7)),
        ],
    );
    v0.insert_key(2, const_frame(&[12, 12, 1], 0.25)).unwrap();
    let v1 = video_with_keys(
        1,
        4,
        &[
            (0, const_frame(&[12, 12, 1], 0.1)),
            (3, const_frame(&[12, 12, 1], 0.9)),
        ],
    );
    save_condensed(&[v0.clone(), v1.clone()], &geom, &path).unwrap();
    let (back, geom2) = load_condensed(&path).unwrap();
    assert_eq!(geom2, geom);
    assert_eq!(back.len(), 2);
    for (orig, load) in [&v0, &v1].into_iter().zip(&back) {
        assert_eq!(load.label, orig.label);
        assert_eq!(load.key_indices(), orig.key_indices());
        for (a, b) in orig.keys().iter().zip(load.keys()) {
            assert_eq!(a.frame.data(), b.frame.data());
            assert!(b.trainable);
        }
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn condensed_container_rejects_corruption() {
    let dir = std::env::temp_dir().join(format!("pvsc-bad-{}", std::process::id()));
    let path = dir.join("set.pvsc");
    let geom = tiny_geometry();
    let v = video_with_keys(
        0,
        4,
        &[
            (0, const_frame(&[12, 12, 1], 0.2)),
            (3, const_frame(&[12, 12, 1], 0.8)),
        ],
    );
    save_condensed(&[v], &geom, &path).unwrap();
    let buf = std::fs::read(&path).unwrap();

    let mut bad = buf.clone();
    bad[0] = b'Q';
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(load_condensed(&path), Err(Error::BadMagic { .. })));

    std::fs::write(&path, &buf[..buf.len() - 7]).unwrap();
    assert!(matches!(load_condensed(&path), Err(Error::Truncated { .. })));

    // Corrupt the first key index (offset: magic 4 + version 4 +
    // geometry 16 + count 4 + class 4 + key count 4 = 36) so the key-set
    // invariant check must fire.
    let mut bad = buf.clone();
    bad[36] = 2;
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(
        load_condensed(&path),
        Err(Error::InvalidConfig(_))
    ));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn saving_mismatched_geometry_fails() {
    let dir = std::env::temp_dir().join(format!("pvsc-geom-{}", std::process::id()));
    let path = dir.join("set.pvsc");
    let v = video_with_keys(
        0,
        4,
        &[
            (0, const_frame(&[12, 12, 1], 0.0)),
            (3, const_frame(&[12, 12, 1], 1.0)),
        ],
    );
    let err = save_condensed(&[v], &Geometry::desk(), &path).unwrap_err();
    assert!(matches!(err, Error::GeometryMismatch { .. }));
    std::fs::remove_dir_all(&dir).ok();
}

