//! MovingShapes: a procedural toy-video benchmark.
//!
//! Each class is a *motion program* — a sprite following a deterministic
//! motion law whose temporal complexity is graded by a nonlinearity
//! rank. Rank-0 classes (pure translation) are fully predictable from
//! their endpoints; higher ranks (bounce, zigzag, orbit, jump) revisit or
//! reverse positions, which endpoint-only interpolation cannot express —
//! exactly the axis an adaptive frame budget should respond to.
//!
//! Per-video randomness (start, size, intensity) comes from counter-mode
//! streams keyed by (seed, split, class, index), so generation is
//! byte-reproducible and order-independent.

use crate::bytes::{self, Reader};
use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::rng::{stream, CounterRng};
use crate::tensor::Tensor;
use std::path::Path;

pub const PVDC_MAGIC: [u8; 4] = *b"PVDC";
pub const PVDC_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpriteKind {
    Square,
    Disk,
}

/// Deterministic center trajectory of the sprite; velocities are in
/// pixels per frame, angles in radians.
#[derive(Clone, Debug, PartialEq)]
pub enum MotionLaw {
    LinearTranslate { vx: f64, vy: f64 },
    Bounce { vx: f64, vy: f64 },
    Zigzag { vx: f64, vy: f64, period: usize },
    CircularOrbit { radius: f64, turns: f64 },
    GrowShrink { swell: f64 },
    HoldThenJump { hold_fraction: f64 },
}

impl MotionLaw {
    /// Motion-complexity grade: 0 for pure translation, higher for laws
    /// whose trajectories bend or tear.
    pub fn nonlinearity_rank(&self) -> u32 {
        match self {
            MotionLaw::LinearTranslate { .. } => 0,
            MotionLaw::Bounce { .. }
            | MotionLaw::GrowShrink { .. }
            | MotionLaw::HoldThenJump { .. } => 1,
            MotionLaw::Zigzag { .. } | MotionLaw::CircularOrbit { .. } => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionProgram {
    pub class: usize,
    pub name: String,
    pub sprite: SpriteKind,
    pub law: MotionLaw,
    /// Copied from the law at construction; kept as data so reports can
    /// group classes without consulting the law.
    pub rank: u32,
}

impl MotionProgram {
    pub fn new(class: usize, name: impl Into<String>, sprite: SpriteKind, law: MotionLaw) -> Self {
        let rank = law.nonlinearity_rank();
        MotionProgram {
            class,
            name: name.into(),
            sprite,
            law,
            rank,
        }
    }
}

/// The stock 6-class benchmark, tuned for the 8×16×16×3 desk geometry:
/// two rank-0 classes and four with rank ≥ 1. The nonlinear classes are
/// deliberately confusable with the linear ones *under two-key
/// interpolation*: dip and zigzag ride the same +1.2 px/frame x-sweep
/// as slide-right with the same sprite, so a straight cross-fade hides
/// what sets them apart; orbit returns to its start point after a full
/// circle, so its two-key rendering is just a static blob; hold-jump
/// shares slide-left's disk sprite and leftward displacement.
/// Mid-sequence frames carry the class identity.
///
/// The two linear classes differ in sprite *and* speed (0.6 vs 1.2
/// px/frame): evaluation trains under mirror augmentation by default,
/// which erases direction, and shape alone is a thin cue at this
/// resolution.
pub fn default_programs() -> Vec<MotionProgram> {
    use MotionLaw::*;
    use SpriteKind::*;
    vec![
        MotionProgram::new(0, "slide-left", Disk, LinearTranslate { vx: -0.6, vy: 0.0 }),
        MotionProgram::new(1, "slide-right", Square, LinearTranslate { vx: 1.2, vy: 0.0 }),
        MotionProgram::new(2, "dip", Square, Bounce { vx: 1.2, vy: 1.9 }),
        MotionProgram::new(3, "zigzag", Square, Zigzag { vx: 1.2, vy: 2.2, period: 2 }),
        // turns = T/(T−1) puts the sprite back on its start point at the
        // final frame: endpoint keys alone cannot encode the sweep.
        MotionProgram::new(4, "orbit", Square, CircularOrbit { radius: 4.0, turns: 8.0 / 7.0 }),
        MotionProgram::new(5, "hold-jump", Disk, HoldThenJump { hold_fraction: 0.5 }),
    ]
}

#[derive(Clone, Debug)]
pub struct Video {
    /// [T, H, W, C], values in [0, 1].
    pub frames: Tensor,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct VideoDataset {
    pub geometry: Geometry,
    pub class_names: Vec<String>,
    /// Nonlinearity rank per class, parallel to `class_names`.
    pub class_ranks: Vec<u32>,
    /// train[class][index], test[class][index].
    pub train: Vec<Vec<Video>>,
    pub test: Vec<Vec<Video>>,
    /// Generation seed; informational only — not part of the container
    /// format, so it is zero on loaded datasets.
    pub seed: u64,
}

impl VideoDataset {
    pub fn classes(&self) -> usize {
        self.train.len()
    }

    pub fn train_per_class(&self) -> usize {
        self.train.first().map_or(0, Vec::len)
    }

    pub fn test_per_class(&self) -> usize {
        self.test.first().map_or(0, Vec::len)
    }
}

// ───────────────────────────── generation ─────────────────────────────

struct Jitter {
    radius: f64,
    intensity: f64,
    rng: CounterRng,
}

/// Generate the per-class train/test splits. Train and test draw from
/// disjoint derived streams, so the splits never collide.
pub fn generate(
    programs: &[MotionProgram],
    train_per_class: usize,
    test_per_class: usize,
    geometry: Geometry,
    seed: u64,
) -> Result<VideoDataset> {
    geometry.validate()?;
    if programs.is_empty() {
        return Err(Error::InvalidConfig("program list is empty".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for p in programs {
        if !seen.insert(p.class) {
            return Err(Error::InvalidConfig(format!(
                "duplicate class id {} in program list",
                p.class
            )));
        }
    }

    let base = CounterRng::new(seed).derive(stream::DATA);
    let render_split = |split_tag: u64, count: usize| -> Result<Vec<Vec<Video>>> {
        programs
            .iter()
            .map(|p| {
                (0..count)
                    .map(|i| {
                        let rng = base
                            .derive(split_tag)
                            .derive(p.class as u64)
                            .derive(i as u64);
                        render_video(p, &geometry, rng)
                    })
                    .collect()
            })
            .collect()
    };

    Ok(VideoDataset {
        geometry,
        class_names: programs.iter().map(|p| p.name.clone()).collect(),
        class_ranks: programs.iter().map(|p| p.rank).collect(),
        train: render_split(0, train_per_class)?,
        test: render_split(1, test_per_class)?,
        seed,
    })
}

fn render_video(program: &MotionProgram, geom: &Geometry, mut rng: CounterRng) -> Result<Video> {
    let radius = 2.2 + rng.uniform(-0.4, 0.6);
    let intensity = 0.7 + rng.uniform(-0.15, 0.3);
    let mut jitter = Jitter {
        radius,
        intensity,
        rng,
    };
    let path = trajectory(program, geom, &mut jitter)?;
    debug_assert_eq!(path.len(), geom.t);

    let mut frames = vec![0.0f32; geom.video_numel()];
    let frame_len = geom.frame_numel();
    for (t, &(cx, cy, r)) in path.iter().enumerate() {
        render_sprite(
            &mut frames[t * frame_len..(t + 1) * frame_len],
            geom,
            program.sprite,
            cx,
            cy,
            r,
            jitter.intensity,
        );
    }
    Ok(Video {
        frames: Tensor::new(geom.video_shape().to_vec(), frames)?,
        label: program.class,
    })
}

/// Center positions and radius per frame. Every law keeps the sprite
/// inside the frame: starts are jittered within a safe box and bouncing
/// laws reflect at its walls.
fn trajectory(
    program: &MotionProgram,
    geom: &Geometry,
    jitter: &mut Jitter,
) -> Result<Vec<(f64, f64, f64)>> {
    let t_len = geom.t;
    let r = jitter.radius;
    let (w, h) = (geom.w as f64, geom.h as f64);
    let (lo_x, hi_x) = (r, w - 1.0 - r);
    let (lo_y, hi_y) = (r, h - 1.0 - r);
    let fit_err = || Error::SpriteDoesNotFit {
        radius: jitter.radius,
        height: geom.h,
        width: geom.w,
        program: program.name.clone(),
    };
    if lo_x >= hi_x || lo_y >= hi_y {
        return Err(fit_err());
    }
    let span = t_len.saturating_sub(1) as f64;

    let path: Vec<(f64, f64)> = match program.law {
        MotionLaw::LinearTranslate { vx, vy } => {
            // Start box shrunk by the full sweep so no reflection is ever
            // needed — centers form an exact arithmetic sequence.
            let (sx_lo, sx_hi) = sweep_box(lo_x, hi_x, vx * span).ok_or_else(fit_err)?;
            let (sy_lo, sy_hi) = sweep_box(lo_y, hi_y, vy * span).ok_or_else(fit_err)?;
            let x0 = jitter.rng.uniform(sx_lo, sx_hi);
            let y0 = jitter.rng.uniform(sy_lo, sy_hi);
            (0..t_len)
                .map(|t| (x0 + vx * t as f64, y0 + vy * t as f64))
                .collect()
        }
        MotionLaw::Bounce { vx, vy } => {
            let x0 = jitter.rng.uniform(lo_x, hi_x);
            let y0 = jitter.rng.uniform(lo_y, hi_y);
            let mut pos = (x0, y0);
            let mut vel = (vx, vy);
            let mut out = vec![pos];
            for _ in 1..t_len {
                pos.0 = reflect_step(pos.0, &mut vel.0, lo_x, hi_x);
                pos.1 = reflect_step(pos.1, &mut vel.1, lo_y, hi_y);
                out.push(pos);
            }
            out
        }
        MotionLaw::Zigzag { vx, vy, period } => {
            let period = period.max(1);
            let x0 = jitter.rng.uniform(lo_x, hi_x);
            let y0 = jitter.rng.uniform(lo_y, hi_y);
            let mut pos = (x0, y0);
            let mut vel_x = vx;
            let mut out = vec![pos];
            for t in 1..t_len {
                // Vertical direction flips every `period` frames; both
                // axes still reflect at the walls as a safety net.
                let dir = if (t / period) % 2 == 0 { 1.0 } else { -1.0 };
                let mut vel_y = vy * dir;
                pos.0 = reflect_step(pos.0, &mut vel_x, lo_x, hi_x);
                pos.1 = reflect_step(pos.1, &mut vel_y, lo_y, hi_y);
                out.push(pos);
            }
            out
        }
        MotionLaw::CircularOrbit { radius, turns } => {
            let (ccx, ccy) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
            let max_orbit = (hi_x - ccx).min(hi_y - ccy);
            let orbit = radius.min(max_orbit);
            if orbit <= 0.0 {
                return Err(fit_err());
            }
            let theta0 = jitter.rng.uniform(0.0, std::f64::consts::TAU);
            let omega = std::f64::consts::TAU * turns / t_len as f64;
            (0..t_len)
                .map(|t| {
                    let a = theta0 + omega * t as f64;
                    (ccx + orbit * a.cos(), ccy + orbit * a.sin())
                })
                .collect()
        }
        MotionLaw::GrowShrink { .. } => {
            let x0 = jitter.rng.uniform(lo_x, hi_x);
            let y0 = jitter.rng.uniform(lo_y, hi_y);
            vec![(x0, y0); t_len]
        }
        MotionLaw::HoldThenJump { hold_fraction } => {
            let x0 = jitter.rng.uniform(lo_x, hi_x);
            let y0 = jitter.rng.uniform(lo_y, hi_y);
            // Jump target mirrors the start through the frame center, so
            // the two resting positions are far apart.
            let (x1, y1) = (w - 1.0 - x0, h - 1.0 - y0);
            let hold = ((t_len as f64) * hold_fraction.clamp(0.0, 1.0)).round() as usize;
            let hold = hold.clamp(1, t_len - 1);
            (0..t_len)
                .map(|t| if t < hold { (x0, y0) } else { (x1, y1) })
                .collect()
        }
    };

    // Radius over time: constant except for grow-shrink.
    let radii: Vec<f64> = match program.law {
        MotionLaw::GrowShrink { swell } => {
            // Largest radius that keeps the sprite inside from its
            // static center: distance to the nearest frame edge.
            let (x0, y0) = path[0];
            let max_r = (w - 1.0 - x0).min(x0).min(h - 1.0 - y0).min(y0).max(r);
            (0..t_len)
                .map(|t| {
                    let phase = std::f64::consts::TAU * t as f64 / t_len as f64;
                    let grown = r * (1.0 + swell * phase.sin());
                    grown.clamp(1.0, max_r)
                })
                .collect()
        }
        _ => vec![r; t_len],
    };

    Ok(path
        .iter()
        .zip(radii)
        .map(|(&(x, y), rad)| (x, y, rad))
        .collect())
}

/// Shrink [lo, hi] so a point starting inside survives a total sweep of
/// `delta` without leaving; None when the sweep exceeds the box.
fn sweep_box(lo: f64, hi: f64, delta: f64) -> Option<(f64, f64)> {
    let (lo2, hi2) = if delta >= 0.0 {
        (lo, hi - delta)
    } else {
        (lo - delta, hi)
    };
    (lo2 < hi2).then_some((lo2, hi2))
}

/// One Euler step with wall reflection at [lo, hi]; flips the velocity
/// component in place when it reflects.
fn reflect_step(pos: f64, vel: &mut f64, lo: f64, hi: f64) -> f64 {
    let mut next = pos + *vel;
    if next > hi {
        next = hi - (next - hi);
        *vel = -*vel;
    } else if next < lo {
        next = lo + (lo - next);
        *vel = -*vel;
    }
    next.clamp(lo, hi)
}

/// Soft-edged grayscale sprite replicated across channels. Coverage
/// falls linearly from 1 to 0 across a one-pixel band at the rim.
fn render_sprite(
    frame: &mut [f32],
    geom: &Geometry,
    sprite: SpriteKind,
    cx: f64,
    cy: f64,
    radius: f64,
    intensity: f64,
) {
    for y in 0..geom.h {
        for x in 0..geom.w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let dist = match sprite {
                SpriteKind::Disk => (dx * dx + dy * dy).sqrt(),
                SpriteKind::Square => dx.abs().max(dy.abs()),
            };
            let coverage = (radius + 0.5 - dist).clamp(0.0, 1.0);
            if coverage > 0.0 {
                let v = (intensity * coverage) as f32;
                let base = (y * geom.w + x) * geom.c;
                for ch in 0..geom.c {
                    frame[base + ch] = v;
                }
            }
        }
    }
}

// ───────────────────────────── sampling ─────────────────────────────

/// Uniform without-replacement batch of one class's train videos,
/// stacked to [B, T, H, W, C]. With `flip` set, each video is mirrored
/// horizontally with probability ½ (the only augmentation).
pub fn sample_real_batch(
    dataset: &VideoDataset,
    class: usize,
    batch: usize,
    rng: &mut CounterRng,
    flip: bool,
) -> Result<Tensor> {
    let videos = dataset
        .train
        .get(class)
        .ok_or(Error::UnknownClass(class))?;
    if batch > videos.len() {
        return Err(Error::OversizedBatch {
            requested: batch,
            class,
            available: videos.len(),
        });
    }
    let picks = rng.sample_without_replacement(videos.len(), batch);
    let geom = &dataset.geometry;
    let mut out = Vec::with_capacity(batch * geom.video_numel());
    for &i in &picks {
        let frames = videos[i].frames.data();
        if flip && rng.bernoulli(0.5) {
            out.extend(flipped_h(frames, geom));
        } else {
            out.extend_from_slice(frames);
        }
    }
    Tensor::new(geom.batch_shape(batch).to_vec(), out)
}

pub(crate) fn flipped_h(frames: &[f32], geom: &Geometry) -> Vec<f32> {
    let mut out = vec![0.0f32; frames.len()];
    let c = geom.c;
    for t in 0..geom.t {
        for y in 0..geom.h {
            let row = (t * geom.h + y) * geom.w * c;
            for x in 0..geom.w {
                let src = row + x * c;
                let dst = row + (geom.w - 1 - x) * c;
                out[dst..dst + c].copy_from_slice(&frames[src..src + c]);
            }
        }
    }
    out
}

// ───────────────────────────── container IO ─────────────────────────────

/// Serialize: magic, version, geometry + counts, label table, then raw
/// f32 frames ordered by (split, class, index).
pub fn save(dataset: &VideoDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(&PVDC_MAGIC);
    bytes::push_u32(&mut out, PVDC_VERSION);
    let g = &dataset.geometry;
    for v in [
        g.t,
        g.h,
        g.w,
        g.c,
        dataset.classes(),
        dataset.train_per_class(),
        dataset.test_per_class(),
    ] {
        bytes::push_u32(&mut out, v as u32);
    }
    for (name, rank) in dataset.class_names.iter().zip(&dataset.class_ranks) {
        bytes::push_str(&mut out, name);
        bytes::push_u32(&mut out, *rank);
    }
    for split in [&dataset.train, &dataset.test] {
        for class_videos in split {
            for video in class_videos {
                bytes::push_f32s(&mut out, video.frames.data());
            }
        }
    }
    bytes::write_file(path.as_ref(), &out)
}

pub fn load(path: impl AsRef<Path>) -> Result<VideoDataset> {
    let buf = bytes::read_file(path.as_ref())?;
    let mut r = Reader::new(&buf);
    r.magic(PVDC_MAGIC)?;
    let version = r.u32()?;
    if version != PVDC_VERSION {
        return Err(Error::BadVersion(version));
    }
    let t = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let c = r.u32()? as usize;
    let classes = r.u32()? as usize;
    let train_per_class = r.u32()? as usize;
    let test_per_class = r.u32()? as usize;
    let geometry = Geometry::new(t, h, w, c);
    geometry.validate()?;

    let mut class_names = Vec::with_capacity(classes);
    let mut class_ranks = Vec::with_capacity(classes);
    for _ in 0..classes {
        class_names.push(r.string()?);
        class_ranks.push(r.u32()?);
    }

    let mut read_split = |count: usize| -> Result<Vec<Vec<Video>>> {
        (0..classes)
            .map(|class| {
                (0..count)
                    .map(|_| {
                        let data = r.f32s(geometry.video_numel())?;
                        Ok(Video {
                            frames: Tensor::new(geometry.video_shape().to_vec(), data)?,
                            label: class,
                        })
                    })
                    .collect()
            })
            .collect()
    };
    let train = read_split(train_per_class)?;
    let test = read_split(test_per_class)?;
    if r.remaining() != 0 {
        return Err(Error::TrailingBytes(r.remaining()));
    }
    Ok(VideoDataset {
        geometry,
        class_names,
        class_ranks,
        train,
        test,
        seed: 0,
    })
}
