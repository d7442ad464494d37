//! Forward compute routines for the graph primitives. All convolutions are
//! stride-1 cross-correlations with zero padding that preserves the spatial
//! extent (kernel extents must be odd). Reductions accumulate in f64.

use crate::tensor::Tensor;

/// x: [N,T,H,W,CI], w: [KT,KH,KW,CI,CO] -> y: [N,T,H,W,CO]
pub fn conv3d(x: &Tensor, w: &Tensor) -> Tensor {
    let (n, t, h, wd, ci) = dims5(x.shape());
    let (kt, kh, kw, wci, co) = dims5(w.shape());
    debug_assert_eq!(ci, wci);
    let (pt, ph, pw) = (kt / 2, kh / 2, kw / 2);
    let xs = x.data();
    let ws = w.data();
    let mut out = vec![0.0f32; n * t * h * wd * co];
    let mut acc = vec![0.0f32; co];
    for ni in 0..n {
        for ti in 0..t {
            for hi in 0..h {
                for wi in 0..wd {
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    for dt in 0..kt {
                        let st = ti + dt;
                        if st < pt || st - pt >= t {
                            continue;
                        }
                        for dh in 0..kh {
                            let sh = hi + dh;
                            if sh < ph || sh - ph >= h {
                                continue;
                            }
                            for dw in 0..kw {
                                let sw = wi + dw;
                                if sw < pw || sw - pw >= wd {
                                    continue;
                                }
                                let xoff =
                                    ((((ni * t + (st - pt)) * h + (sh - ph)) * wd) + (sw - pw))
                                        * ci;
                                let xrow = &xs[xoff..xoff + ci];
                                let wbase = (((dt * kh + dh) * kw + dw) * ci) * co;
                                for (c, &xv) in xrow.iter().enumerate() {
                                    let wrow = &ws[wbase + c * co..wbase + (c + 1) * co];
                                    for (a, &wv) in acc.iter_mut().zip(wrow) {
                                        *a += xv * wv;
                                    }
                                }
                            }
                        }
                    }
                    let ooff = ((((ni * t + ti) * h + hi) * wd) + wi) * co;
                    out[ooff..ooff + co].copy_from_slice(&acc);
                }
            }
        }
    }
    Tensor::new(vec![n, t, h, wd, co], out).expect("conv3d shape")
}

/// Gradient of conv3d w.r.t. its input.
/// dy: [N,T,H,W,CO], w: [KT,KH,KW,CI,CO] -> dx: [N,T,H,W,CI]
pub fn conv3d_bwd_input(dy: &Tensor, w: &Tensor) -> Tensor {
    let (n, t, h, wd, co) = dims5(dy.shape());
    let (kt, kh, kw, ci, wco) = dims5(w.shape());
    debug_assert_eq!(co, wco);
    let (pt, ph, pw) = (kt / 2, kh / 2, kw / 2);
    let dys = dy.data();
    let ws = w.data();
    let mut out = vec![0.0f32; n * t * h * wd * ci];
    for ni in 0..n {
        for ti in 0..t {
            for hi in 0..h {
                for wi in 0..wd {
                    let ooff = ((((ni * t + ti) * h + hi) * wd) + wi) * ci;
                    let acc = &mut out[ooff..ooff + ci];
                    for dt in 0..kt {
                        // dy index ti - dt + pt
                        let st = ti + pt;
                        if st < dt || st - dt >= t {
                            continue;
                        }
                        for dh in 0..kh {
                            let sh = hi + ph;
                            if sh < dh || sh - dh >= h {
                                continue;
                            }
                            for dw in 0..kw {
                                let sw = wi + pw;
                                if sw < dw || sw - dw >= wd {
                                    continue;
                                }
                                let dyoff =
                                    ((((ni * t + (st - dt)) * h + (sh - dh)) * wd) + (sw - dw))
                                        * co;
                                let dyrow = &dys[dyoff..dyoff + co];
                                let wbase = (((dt * kh + dh) * kw + dw) * ci) * co;
                                for (c, a) in acc.iter_mut().enumerate() {
                                    let wrow = &ws[wbase + c * co..wbase + (c + 1) * co];
                                    let mut s = 0.0f32;
                                    for (&dv, &wv) in dyrow.iter().zip(wrow) {
                                        s += dv * wv;
                                    }
                                    *a += s;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, t, h, wd, ci], out).expect("conv3d_bwd_input shape")
}

/// Gradient of conv3d w.r.t. its kernel.
/// x: [N,T,H,W,CI], dy: [N,T,H,W,CO] -> dw: [KT,KH,KW,CI,CO]
pub fn conv3d_bwd_kernel(x: &Tensor, dy: &Tensor, kdims: (usize, usize, usize)) -> Tensor {
    let (n, t, h, wd, ci) = dims5(x.shape());
    let (_, _, _, _, co) = dims5(dy.shape());
    let (kt, kh, kw) = kdims;
    let (pt, ph, pw) = (kt / 2, kh / 2, kw / 2);
    let xs = x.data();
    let dys = dy.data();
    let mut out = vec![0.0f32; kt * kh * kw * ci * co];
    for ni in 0..n {
        for ti in 0..t {
            for hi in 0..h {
                for wi in 0..wd {
                    let dyoff = ((((ni * t + ti) * h + hi) * wd) + wi) * co;
                    let dyrow = &dys[dyoff..dyoff + co];
                    for dt in 0..kt {
                        let st = ti + dt;
                        if st < pt || st - pt >= t {
                            continue;
                        }
                        for dh in 0..kh {
                            let sh = hi + dh;
                            if sh < ph || sh - ph >= h {
                                continue;
                            }
                            for dw in 0..kw {
                                let sw = wi + dw;
                                if sw < pw || sw - pw >= wd {
                                    continue;
                                }
                                let xoff =
                                    ((((ni * t + (st - pt)) * h + (sh - ph)) * wd) + (sw - pw))
                                        * ci;
                                let xrow = &xs[xoff..xoff + ci];
                                let obase = (((dt * kh + dh) * kw + dw) * ci) * co;
                                for (c, &xv) in xrow.iter().enumerate() {
                                    let orow = &mut out[obase + c * co..obase + (c + 1) * co];
                                    for (o, &dv) in orow.iter_mut().zip(dyrow) {
                                        *o += xv * dv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![kt, kh, kw, ci, co], out).expect("conv3d_bwd_kernel shape")
}

/// [m,k] x [k,n] -> [m,n]
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &bd[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out).expect("matmul shape")
}

pub fn transpose2d(a: &Tensor) -> Tensor {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let ad = a.data();
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = ad[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out).expect("transpose shape")
}

/// Sum over `axes` (sorted, distinct); the reduced axes are removed from the
/// shape. Accumulates in f64.
pub fn sum_axes(x: &Tensor, axes: &[usize]) -> Tensor {
    let shape = x.shape();
    let out_shape: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(i, _)| !axes.contains(i))
        .map(|(_, &e)| e)
        .collect();
    let out_n: usize = out_shape.iter().product();
    let mut acc = vec![0.0f64; out_n];
    // Strides of the output laid over the input dims (0 on reduced axes).
    let in_strides = strides(shape);
    let mut out_strides_on_in = vec![0usize; shape.len()];
    {
        let mut s = 1usize;
        for i in (0..shape.len()).rev() {
            if !axes.contains(&i) {
                out_strides_on_in[i] = s;
                s *= shape[i];
            }
        }
    }
    fold_rec(
        x.data(),
        shape,
        &in_strides,
        &out_strides_on_in,
        0,
        0,
        0,
        &mut |off, v, acc: &mut Vec<f64>| acc[off] += v as f64,
        &mut acc,
    );
    Tensor::new(out_shape, acc.into_iter().map(|v| v as f32).collect()).expect("sum_axes shape")
}

/// Repeat `x` along the inserted `axes` so that the result has `out_shape`.
/// Inverse of `sum_axes` in the shape sense.
pub fn broadcast_axes(x: &Tensor, out_shape: &[usize], axes: &[usize]) -> Tensor {
    let out_n: usize = out_shape.iter().product();
    let mut out = vec![0.0f32; out_n];
    let out_strides = strides(out_shape);
    let mut in_strides_on_out = vec![0usize; out_shape.len()];
    {
        let mut s = 1usize;
        for i in (0..out_shape.len()).rev() {
            if !axes.contains(&i) {
                in_strides_on_out[i] = s;
                s *= out_shape[i];
            }
        }
    }
    scatter_rec(
        &mut out,
        out_shape,
        &out_strides,
        &in_strides_on_out,
        x.data(),
        0,
        0,
        0,
    );
    Tensor::new(out_shape.to_vec(), out).expect("broadcast shape")
}

#[allow(clippy::too_many_arguments)]
fn fold_rec<A>(
    data: &[f32],
    shape: &[usize],
    in_strides: &[usize],
    out_strides: &[usize],
    dim: usize,
    in_off: usize,
    out_off: usize,
    f: &mut impl FnMut(usize, f32, &mut A),
    acc: &mut A,
) {
    if dim == shape.len() {
        f(out_off, data[in_off], acc);
        return;
    }
    for i in 0..shape[dim] {
        fold_rec(
            data,
            shape,
            in_strides,
            out_strides,
            dim + 1,
            in_off + i * in_strides[dim],
            out_off + i * out_strides[dim],
            f,
            acc,
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn scatter_rec(
    out: &mut [f32],
    out_shape: &[usize],
    out_strides: &[usize],
    in_strides: &[usize],
    input: &[f32],
    dim: usize,
    out_off: usize,
    in_off: usize,
) {
    if dim == out_shape.len() {
        out[out_off] = input[in_off];
        return;
    }
    for i in 0..out_shape[dim] {
        scatter_rec(
            out,
            out_shape,
            out_strides,
            in_strides,
            input,
            dim + 1,
            out_off + i * out_strides[dim],
            in_off + i * in_strides[dim],
        );
    }
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Row softmax of [B,K], computed in f64 per row.
pub fn softmax_rows(z: &Tensor) -> Tensor {
    let (b, k) = (z.shape()[0], z.shape()[1]);
    let zd = z.data();
    let mut out = vec![0.0f32; b * k];
    for i in 0..b {
        let row = &zd[i * k..(i + 1) * k];
        let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| ((v as f64) - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        for (o, e) in out[i * k..(i + 1) * k].iter_mut().zip(exps) {
            *o = (e / s) as f32;
        }
    }
    Tensor::new(vec![b, k], out).expect("softmax shape")
}

/// Mean softmax cross-entropy of [B,K] logits against integer labels.
pub fn softmax_cross_entropy(z: &Tensor, labels: &[usize]) -> f32 {
    let (b, k) = (z.shape()[0], z.shape()[1]);
    let zd = z.data();
    let mut total = 0.0f64;
    for (i, &y) in labels.iter().enumerate() {
        let row = &zd[i * k..(i + 1) * k];
        let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse: f64 = row.iter().map(|&v| ((v as f64) - m).exp()).sum::<f64>().ln() + m;
        total += lse - row[y] as f64;
    }
    (total / b as f64) as f32
}

fn dims5(s: &[usize]) -> (usize, usize, usize, usize, usize) {
    debug_assert_eq!(s.len(), 5);
    (s[0], s[1], s[2], s[3], s[4])
}
