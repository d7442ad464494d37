//! Shared oracle machinery for integration tests.
//!
//! Everything here is written independently of the engine under test:
//! plain f64 arrays, naive scatter/gather loops, and textbook formulas.
//! Gradient checks compare the engine's analytic gradients against
//! central finite differences of these references, so agreement means
//! two independent derivations coincide.

#![allow(dead_code)]

use prism_core::rng::CounterRng;
use prism_core::tensor::Tensor;

/// Relative error with a floor guarding the zero/zero case.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central difference of `f` in coordinate `j` of `x`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], j: usize, h: f64) -> f64 {
    let mut plus = x.to_vec();
    plus[j] += h;
    let mut minus = x.to_vec();
    minus[j] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

// ───────────────────────── f64 reference arrays ─────────────────────────

#[derive(Clone, Debug)]
pub struct Arr {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Arr {
    pub fn zeros(shape: &[usize]) -> Self {
        Arr {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Arr {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        Arr {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn from_parts(shape: &[usize], data: &[f64]) -> Self {
        Arr::new(shape, data.to_vec())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            self.shape.clone(),
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .unwrap()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Decode a linear index into per-axis coordinates.
pub fn decode(shape: &[usize], mut lin: usize) -> Vec<usize> {
    let mut c = vec![0usize; shape.len()];
    for a in (0..shape.len()).rev() {
        c[a] = lin % shape[a];
        lin /= shape[a];
    }
    c
}

/// Encode per-axis coordinates into a linear index.
pub fn encode(shape: &[usize], coords: &[usize]) -> usize {
    let mut lin = 0usize;
    for (a, &c) in coords.iter().enumerate() {
        lin = lin * shape[a] + c;
    }
    lin
}

pub mod refimpl {
    //! Naive f64 implementations of every engine primitive.

    use super::{decode, encode, Arr};

    pub fn add(a: &Arr, b: &Arr) -> Arr {
        zip(a, b, |x, y| x + y)
    }

    pub fn sub(a: &Arr, b: &Arr) -> Arr {
        zip(a, b, |x, y| x - y)
    }

    pub fn mul(a: &Arr, b: &Arr) -> Arr {
        zip(a, b, |x, y| x * y)
    }

    pub fn scalar_mul(a: &Arr, c: f64) -> Arr {
        Arr::new(&a.shape, a.data.iter().map(|&v| v * c).collect())
    }

    pub fn relu(a: &Arr) -> Arr {
        Arr::new(&a.shape, a.data.iter().map(|&v| v.max(0.0)).collect())
    }

    fn zip(a: &Arr, b: &Arr, f: impl Fn(f64, f64) -> f64) -> Arr {
        assert_eq!(a.shape, b.shape);
        Arr::new(
            &a.shape,
            a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        )
    }

    pub fn matmul(a: &Arr, b: &Arr) -> Arr {
        let (m, k) = (a.shape[0], a.shape[1]);
        let n = b.shape[1];
        assert_eq!(k, b.shape[0]);
        let mut out = Arr::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.data[i * k + p] * b.data[p * n + j];
                }
                out.data[i * n + j] = s;
            }
        }
        out
    }

    pub fn transpose2d(a: &Arr) -> Arr {
        let (m, n) = (a.shape[0], a.shape[1]);
        let mut out = Arr::zeros(&[n, m]);
        for i in 0..m {
            for j in 0..n {
                out.data[j * m + i] = a.data[i * n + j];
            }
        }
        out
    }

    /// Same-padding stride-1 cross-correlation, written scatter-style:
    /// each input voxel pushes its kernel taps into the output.
    pub fn conv3d(x: &Arr, w: &Arr) -> Arr {
        let (n, t, h, wd, ci) = dims5(&x.shape);
        let (kt, kh, kw, wci, co) = dims5(&w.shape);
        assert_eq!(ci, wci);
        let (pt, ph, pw) = (kt / 2, kh / 2, kw / 2);
        let mut out = Arr::zeros(&[n, t, h, wd, co]);
        for ni in 0..n {
            for si in 0..t {
                for hi in 0..h {
                    for wi in 0..wd {
                        for c_in in 0..ci {
                            let xv = x.data
                                [((((ni * t + si) * h + hi) * wd) + wi) * ci + c_in];
                            if xv == 0.0 {
                                continue;
                            }
                            for dt in 0..kt {
                                // output time receiving this tap: τ = s − dt + pt
                                let tau = si + pt;
                                if tau < dt || tau - dt >= t {
                                    continue;
                                }
                                let tau = tau - dt;
                                for dh in 0..kh {
                                    let oh = hi + ph;
                                    if oh < dh || oh - dh >= h {
                                        continue;
                                    }
                                    let oh = oh - dh;
                                    for dw in 0..kw {
                                        let ow = wi + pw;
                                        if ow < dw || ow - dw >= wd {
                                            continue;
                                        }
                                        let ow = ow - dw;
                                        for c_out in 0..co {
                                            let wv = w.data
                                                [(((dt * kh + dh) * kw + dw) * ci + c_in) * co
                                                    + c_out];
                                            out.data[((((ni * t + tau) * h + oh) * wd) + ow)
                                                * co
                                                + c_out] += xv * wv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Adjoint of conv3d w.r.t. its input, scatter-style from dy.
    pub fn conv3d_bwd_input(dy: &Arr, w: &Arr) -> Arr {
        let (n, t, h, wd, co) = dims5(&dy.shape);
        let (kt, kh, kw, ci, wco) = dims5(&w.shape);
        assert_eq!(co, wco);
        let (pt, ph, pw) = (kt / 2, kh / 2, kw / 2);
        let mut dx = Arr::zeros(&[n, t, h, wd, ci]);
        for ni in 0..n {
            for tau in 0..t {
                for oh in 0..h {
                    for ow in 0..wd {
                        for c_out in 0..co {
                            let dv = dy.data
                                [((((ni * t + tau) * h + oh) * wd) + ow) * co + c_out];
                            if dv == 0.0 {
                                continue;
                            }
                            // source voxel: s = τ + dt − pt
                            for dt in 0..kt {
                                let s = tau + dt;
                                if s < pt || s - pt >= t {
                                    continue;
                                }
                                let s = s - pt;
                                for dh in 0..kh {
                                    let sh = oh + dh;
                                    if sh < ph || sh - ph >= h {
                                        continue;
                                    }
                                    let sh = sh - ph;
                                    for dw in 0..kw {
                                        let sw = ow + dw;
                                        if sw < pw || sw - pw >= wd {
                                            continue;
                                        }
                                        let sw = sw - pw;
                                        for c_in in 0..ci {
                                            let wv = w.data
                                                [(((dt * kh + dh) * kw + dw) * ci + c_in) * co
                                                    + c_out];
                                            dx.data[((((ni * t + s) * h + sh) * wd) + sw) * ci
                                                + c_in] += dv * wv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    /// Adjoint of conv3d w.r.t. its kernel.
    pub fn conv3d_bwd_kernel(x: &Arr, dy: &Arr, kdims: (usize, usize, usize)) -> Arr {
        let (n, t, h, wd, ci) = dims5(&x.shape);
        let (_, _, _, _, co) = dims5(&dy.shape);
        let (kt, kh, kw) = kdims;
        let (pt, ph, pw) = (kt / 2, kh / 2, kw / 2);
        let mut dw_out = Arr::zeros(&[kt, kh, kw, ci, co]);
        for dt in 0..kt {
            for dh in 0..kh {
                for dwi in 0..kw {
                    for ni in 0..n {
                        for tau in 0..t {
                            let s = tau + dt;
                            if s < pt || s - pt >= t {
                                continue;
                            }
                            let s = s - pt;
                            for oh in 0..h {
                                let sh = oh + dh;
                                if sh < ph || sh - ph >= h {
                                    continue;
                                }
                                let sh = sh - ph;
                                for ow in 0..wd {
                                    let sw = ow + dwi;
                                    if sw < pw || sw - pw >= wd {
                                        continue;
                                    }
                                    let sw = sw - pw;
                                    for c_in in 0..ci {
                                        let xv = x.data
                                            [((((ni * t + s) * h + sh) * wd) + sw) * ci + c_in];
                                        if xv == 0.0 {
                                            continue;
                                        }
                                        for c_out in 0..co {
                                            let dv = dy.data[((((ni * t + tau) * h + oh) * wd)
                                                + ow)
                                                * co
                                                + c_out];
                                            dw_out.data[(((dt * kh + dh) * kw + dwi) * ci
                                                + c_in)
                                                * co
                                                + c_out] += xv * dv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        dw_out
    }

    pub fn sum_axes(x: &Arr, axes: &[usize]) -> Arr {
        let out_shape: Vec<usize> = x
            .shape
            .iter()
            .enumerate()
            .filter(|(a, _)| !axes.contains(a))
            .map(|(_, &e)| e)
            .collect();
        let mut out = Arr::zeros(&out_shape);
        for i in 0..x.numel() {
            let c = decode(&x.shape, i);
            let kept: Vec<usize> = c
                .iter()
                .enumerate()
                .filter(|(a, _)| !axes.contains(a))
                .map(|(_, &v)| v)
                .collect();
            out.data[encode(&out_shape, &kept)] += x.data[i];
        }
        out
    }

    pub fn mean_axes(x: &Arr, axes: &[usize]) -> Arr {
        let count: usize = axes.iter().map(|&a| x.shape[a]).product();
        scalar_mul(&sum_axes(x, axes), 1.0 / count as f64)
    }

    pub fn broadcast_axes(x: &Arr, out_shape: &[usize], axes: &[usize]) -> Arr {
        let mut out = Arr::zeros(out_shape);
        for i in 0..out.numel() {
            let c = decode(out_shape, i);
            let kept: Vec<usize> = c
                .iter()
                .enumerate()
                .filter(|(a, _)| !axes.contains(a))
                .map(|(_, &v)| v)
                .collect();
            out.data[i] = x.data[encode(&x.shape, &kept)];
        }
        out
    }

    pub fn softmax_rows(z: &Arr) -> Arr {
        let (b, k) = (z.shape[0], z.shape[1]);
        let mut out = Arr::zeros(&[b, k]);
        for r in 0..b {
            let row = &z.data[r * k..(r + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
            let s: f64 = exps.iter().sum();
            for (j, e) in exps.iter().enumerate() {
                out.data[r * k + j] = e / s;
            }
        }
        out
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn softmax_cross_entropy(z: &Arr, labels: &[usize]) -> f64 {
        let (b, k) = (z.shape[0], z.shape[1]);
        assert_eq!(b, labels.len());
        let mut total = 0.0;
        for r in 0..b {
            let row = &z.data[r * k..(r + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[labels[r]];
        }
        total / b as f64
    }

    /// d(mean CE)/dz = (softmax − onehot)/B.
    pub fn d_softmax_cross_entropy(z: &Arr, labels: &[usize]) -> Arr {
        let (b, k) = (z.shape[0], z.shape[1]);
        let mut g = softmax_rows(z);
        for (r, &y) in labels.iter().enumerate() {
            g.data[r * k + y] -= 1.0;
        }
        for v in &mut g.data {
            *v /= b as f64;
        }
        g
    }

    pub fn concat(parts: &[&Arr], axis: usize) -> Arr {
        let first = &parts[0].shape;
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let mut out = Arr::zeros(&out_shape);
        let mut offset = 0usize;
        for p in parts {
            for i in 0..p.numel() {
                let mut c = decode(&p.shape, i);
                c[axis] += offset;
                out.data[encode(&out_shape, &c)] = p.data[i];
            }
            offset += p.shape[axis];
        }
        out
    }

    pub fn slice_axis(x: &Arr, axis: usize, start: usize, len: usize) -> Arr {
        let mut out_shape = x.shape.clone();
        out_shape[axis] = len;
        let mut out = Arr::zeros(&out_shape);
        for i in 0..out.numel() {
            let mut c = decode(&out_shape, i);
            c[axis] += start;
            out.data[i] = x.data[encode(&x.shape, &c)];
        }
        out
    }

    /// 2×2 spatial mean-pool on [N,T,H,W,C].
    pub fn pool2x2(x: &Arr) -> Arr {
        let (n, t, h, w, c) = dims5(&x.shape);
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Arr::zeros(&[n, t, oh, ow, c]);
        for i in 0..out.numel() {
            let co = decode(&out.shape, i);
            let mut s = 0.0;
            for dh in 0..2 {
                for dw in 0..2 {
                    let idx = encode(
                        &x.shape,
                        &[co[0], co[1], co[2] * 2 + dh, co[3] * 2 + dw, co[4]],
                    );
                    s += x.data[idx];
                }
            }
            out.data[i] = s / 4.0;
        }
        out
    }

    /// Adjoint of `pool2x2`: spread each pooled gradient equally.
    pub fn unpool2x2(dy: &Arr, in_shape: &[usize]) -> Arr {
        let mut dx = Arr::zeros(in_shape);
        for i in 0..dy.numel() {
            let co = decode(&dy.shape, i);
            let quarter = dy.data[i] / 4.0;
            for dh in 0..2 {
                for dw in 0..2 {
                    let idx = encode(
                        in_shape,
                        &[co[0], co[1], co[2] * 2 + dh, co[3] * 2 + dw, co[4]],
                    );
                    dx.data[idx] += quarter;
                }
            }
        }
        dx
    }

    pub fn dims5(shape: &[usize]) -> (usize, usize, usize, usize, usize) {
        assert_eq!(shape.len(), 5);
        (shape[0], shape[1], shape[2], shape[3], shape[4])
    }
}

// ─────────────────── f64 conv3d-micro with hand backprop ───────────────────

/// Parameters of the reference two-block conv net, layer order matching
/// the engine's layer table (conv1.w, conv1.b, conv2.w, conv2.b, head.w,
/// head.b).
#[derive(Clone)]
pub struct MicroRef {
    pub w1: Arr,
    pub b1: Arr,
    pub w2: Arr,
    pub b2: Arr,
    pub hw: Arr,
    pub hb: Arr,
}

impl MicroRef {
    pub fn from_params(params: &prism_core::models::Params) -> Self {
        let e = params.entries();
        MicroRef {
            w1: Arr::from_tensor(&e[0].1),
            b1: Arr::from_tensor(&e[1].1),
            w2: Arr::from_tensor(&e[2].1),
            b2: Arr::from_tensor(&e[3].1),
            hw: Arr::from_tensor(&e[4].1),
            hb: Arr::from_tensor(&e[5].1),
        }
    }

    pub fn flat_len(&self) -> usize {
        self.w1.numel()
            + self.b1.numel()
            + self.w2.numel()
            + self.b2.numel()
            + self.hw.numel()
            + self.hb.numel()
    }
}

/// Intermediate activations kept for the backward pass and for the
/// relu-kink finite-difference guard.
pub struct MicroTrace {
    pub pre1: Arr,
    pub pool1: Arr,
    pub pre2: Arr,
    pub pool2: Arr,
    pub feat: Arr,
    pub logits: Arr,
    pub loss: f64,
}

fn bias_broadcast(b: &Arr, shape: &[usize]) -> Arr {
    refimpl::broadcast_axes(b, shape, &[0, 1, 2, 3])
}

/// Reference forward: conv → +b → relu → pool, twice; global mean; head;
/// mean cross-entropy.
pub fn micro_forward(net: &MicroRef, x: &Arr, labels: &[usize]) -> MicroTrace {
    use refimpl as r;
    let co1 = net.w1.shape[4];
    let conv1 = r::conv3d(x, &net.w1);
    let mut shape1 = x.shape.clone();
    shape1[4] = co1;
    let pre1 = r::add(&conv1, &bias_broadcast(&net.b1, &shape1));
    let pool1 = r::pool2x2(&r::relu(&pre1));

    let co2 = net.w2.shape[4];
    let conv2 = r::conv3d(&pool1, &net.w2);
    let mut shape2 = pool1.shape.clone();
    shape2[4] = co2;
    let pre2 = r::add(&conv2, &bias_broadcast(&net.b2, &shape2));
    let pool2 = r::pool2x2(&r::relu(&pre2));

    let feat = r::mean_axes(&pool2, &[1, 2, 3]);
    let k = net.hw.shape[1];
    let logits = r::add(
        &r::matmul(&feat, &net.hw),
        &r::broadcast_axes(&net.hb, &[feat.shape[0], k], &[0]),
    );
    let loss = r::softmax_cross_entropy(&logits, labels);
    MicroTrace {
        pre1,
        pool1,
        pre2,
        pool2,
        feat,
        logits,
        loss,
    }
}

/// Hand-written first-order backprop: gradients of the mean cross-entropy
/// w.r.t. every parameter, flattened in layer order.
pub fn micro_param_grads(net: &MicroRef, x: &Arr, labels: &[usize]) -> Vec<f64> {
    use refimpl as r;
    let trace = micro_forward(net, x, labels);

    let dlogits = r::d_softmax_cross_entropy(&trace.logits, labels);
    let dhb = r::sum_axes(&dlogits, &[0]);
    let dhw = r::matmul(&r::transpose2d(&trace.feat), &dlogits);
    let dfeat = r::matmul(&dlogits, &r::transpose2d(&net.hw));

    // feat = mean over (t, h, w) of pool2.
    let count2: usize = trace.pool2.shape[1..4].iter().product();
    let dpool2 = r::scalar_mul(
        &r::broadcast_axes(&dfeat, &trace.pool2.shape, &[1, 2, 3]),
        1.0 / count2 as f64,
    );
    let dact2 = r::unpool2x2(&dpool2, &trace.pre2.shape);
    let dpre2 = mask_step(&dact2, &trace.pre2);
    let kd2 = (net.w2.shape[0], net.w2.shape[1], net.w2.shape[2]);
    let dw2 = r::conv3d_bwd_kernel(&trace.pool1, &dpre2, kd2);
    let db2 = r::sum_axes(&dpre2, &[0, 1, 2, 3]);
    let dpool1 = r::conv3d_bwd_input(&dpre2, &net.w2);

    let dact1 = r::unpool2x2(&dpool1, &trace.pre1.shape);
    let dpre1 = mask_step(&dact1, &trace.pre1);
    let kd1 = (net.w1.shape[0], net.w1.shape[1], net.w1.shape[2]);
    let dw1 = r::conv3d_bwd_kernel(x, &dpre1, kd1);
    let db1 = r::sum_axes(&dpre1, &[0, 1, 2, 3]);

    let mut flat = Vec::with_capacity(net.flat_len());
    for part in [&dw1, &db1, &dw2, &db2, &dhw, &dhb] {
        flat.extend_from_slice(&part.data);
    }
    flat
}

fn mask_step(g: &Arr, pre: &Arr) -> Arr {
    Arr::new(
        &g.shape,
        g.data
            .iter()
            .zip(&pre.data)
            .map(|(&gv, &pv)| if pv > 0.0 { gv } else { 0.0 })
            .collect(),
    )
}

/// Smallest |preactivation| across both relu layers — the margin that
/// must exceed the finite-difference step for the mask to be stable.
pub fn micro_relu_margin(trace: &MicroTrace) -> f64 {
    trace
        .pre1
        .data
        .iter()
        .chain(&trace.pre2.data)
        .fold(f64::INFINITY, |m, &v| m.min(v.abs()))
}

/// True when the two traces induce identical relu masks.
pub fn same_relu_masks(a: &MicroTrace, b: &MicroTrace) -> bool {
    let sig = |arr: &Arr| -> Vec<bool> { arr.data.iter().map(|&v| v > 0.0).collect() };
    sig(&a.pre1) == sig(&b.pre1) && sig(&a.pre2) == sig(&b.pre2)
}

// ───────────────────────── random case generation ─────────────────────────

pub fn random_arr(rng: &mut CounterRng, shape: &[usize], lo: f64, hi: f64) -> Arr {
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.uniform(lo, hi))
        .collect();
    Arr::new(shape, data)
}

/// Uniform values bounded away from zero — keeps relu kinks at a safe
/// distance from finite-difference probes.
pub fn random_arr_off_zero(rng: &mut CounterRng, shape: &[usize], margin: f64) -> Arr {
    let data = (0..shape.iter().product::<usize>())
        .map(|_| {
            let mag = rng.uniform(margin, 1.0);
            if rng.bernoulli(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Arr::new(shape, data)
}

/// Round every value to its nearest f32 so the engine (f32) and the
/// reference (f64) evaluate the same function at the same point.
pub fn snap32(a: Arr) -> Arr {
    Arr::new(
        &a.shape,
        a.data.iter().map(|&v| v as f32 as f64).collect(),
    )
}
