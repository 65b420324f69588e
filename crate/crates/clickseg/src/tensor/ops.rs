//! The fixed forward-op set. Shape rules are checked up front; reductions
//! and inner products accumulate in f64 before narrowing to f32 so that
//! scalar losses are stable enough for central-difference checks.

use super::{Op, Tensor, EXP_CLAMP, LOG_FLOOR};
use crate::error::{Error, Result};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn nchw(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::invalid(format!(
            "{op} expects a rank-4 N,C,H,W tensor, got shape {:?}",
            t.shape()
        ))),
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let out: Vec<f32> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(a.shape().to_vec(), out, Op::Add(a.clone(), b.clone())))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("sub", a, b)?;
    let out: Vec<f32> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x - y).collect();
    Ok(Tensor::from_op(a.shape().to_vec(), out, Op::Sub(a.clone(), b.clone())))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let out: Vec<f32> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    Ok(Tensor::from_op(a.shape().to_vec(), out, Op::Mul(a.clone(), b.clone())))
}

pub fn abs(x: &Tensor) -> Result<Tensor> {
    let out: Vec<f32> = x.data().iter().map(|v| v.abs()).collect();
    Ok(Tensor::from_op(x.shape().to_vec(), out, Op::Abs(x.clone())))
}

/// exp with input clamped to `[-EXP_CLAMP, EXP_CLAMP]`.
pub fn exp(x: &Tensor) -> Result<Tensor> {
    let out: Vec<f32> = x
        .data()
        .iter()
        .map(|v| v.clamp(-EXP_CLAMP, EXP_CLAMP).exp())
        .collect();
    Ok(Tensor::from_op(x.shape().to_vec(), out, Op::Exp(x.clone())))
}

/// ln(max(v, LOG_FLOOR)) — probabilities may underflow in f32.
pub fn log(x: &Tensor) -> Result<Tensor> {
    let out: Vec<f32> = x.data().iter().map(|v| v.max(LOG_FLOOR).ln()).collect();
    Ok(Tensor::from_op(x.shape().to_vec(), out, Op::Log(x.clone())))
}

pub fn relu(x: &Tensor) -> Result<Tensor> {
    let out: Vec<f32> = x.data().iter().map(|v| v.max(0.0)).collect();
    Ok(Tensor::from_op(x.shape().to_vec(), out, Op::Relu(x.clone())))
}

pub fn elemwise_max(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("elemwise_max", a, b)?;
    let out: Vec<f32> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| if x >= y { *x } else { *y })
        .collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        out,
        Op::ElemwiseMax(a.clone(), b.clone()),
    ))
}

/// Full reduction to a rank-1 scalar.
pub fn reduce_sum(x: &Tensor) -> Result<Tensor> {
    let s: f64 = x.data().iter().map(|&v| v as f64).sum();
    Ok(Tensor::from_op(vec![1], vec![s as f32], Op::ReduceSum(x.clone())))
}

pub fn reduce_mean(x: &Tensor) -> Result<Tensor> {
    let s: f64 = x.data().iter().map(|&v| v as f64).sum();
    let m = s / x.numel() as f64;
    Ok(Tensor::from_op(vec![1], vec![m as f32], Op::ReduceMean(x.clone())))
}

/// Softmax over the channel dim of an N,C,H,W tensor, per pixel.
pub fn softmax_channel(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = nchw("softmax_channel", x)?;
    let xv = x.data();
    let mut out = vec![0.0f32; xv.len()];
    let plane = h * w;
    for b in 0..n {
        for p in 0..plane {
            let idx = |ch: usize| (b * c + ch) * plane + p;
            let mut mx = f32::NEG_INFINITY;
            for ch in 0..c {
                mx = mx.max(xv[idx(ch)]);
            }
            let mut denom = 0.0f64;
            for ch in 0..c {
                let e = ((xv[idx(ch)] - mx) as f64).exp();
                out[idx(ch)] = e as f32;
                denom += e;
            }
            for ch in 0..c {
                out[idx(ch)] = (out[idx(ch)] as f64 / denom) as f32;
            }
        }
    }
    drop(xv);
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        Op::SoftmaxChannel(x.clone()),
    ))
}

pub(super) fn softmax_channel_vjp(out: &[f32], shape: &[usize], dout: &[f32]) -> Vec<f32> {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let plane = h * w;
    let mut dx = vec![0.0f32; out.len()];
    for b in 0..n {
        for p in 0..plane {
            let idx = |ch: usize| (b * c + ch) * plane + p;
            let mut dot = 0.0f64;
            for ch in 0..c {
                dot += dout[idx(ch)] as f64 * out[idx(ch)] as f64;
            }
            for ch in 0..c {
                let i = idx(ch);
                dx[i] = (out[i] as f64 * (dout[i] as f64 - dot)) as f32;
            }
        }
    }
    dx
}

/// 3×3 conv, stride 1, zero padding 1. Input (1,Cin,H,W), weight
/// (Cout,Cin,3,3), bias (Cout) → output (1,Cout,H,W).
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, cin, h, w) = nchw("conv2d", input)?;
    if n != 1 {
        return Err(Error::invalid(format!(
            "conv2d supports batch 1, got shape {:?}",
            input.shape()
        )));
    }
    let (cout, wcin, kh, kw) = nchw("conv2d", weight)?;
    if wcin != cin || kh != 3 || kw != 3 {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: input.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        });
    }
    if bias.shape() != [cout] {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: weight.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }

    let xv = input.data();
    let wv = weight.data();
    let bv = bias.data();
    let mut out = vec![0.0f32; cout * h * w];
    for o in 0..cout {
        for y in 0..h {
            for x in 0..w {
                let mut acc = bv[o] as f64;
                for i in 0..cin {
                    for ky in 0..3usize {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..3usize {
                            let sx = x as isize + kx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let xi = (i * h + sy as usize) * w + sx as usize;
                            let wi = ((o * cin + i) * 3 + ky) * 3 + kx;
                            acc += xv[xi] as f64 * wv[wi] as f64;
                        }
                    }
                }
                out[(o * h + y) * w + x] = acc as f32;
            }
        }
    }
    drop(xv);
    drop(wv);
    drop(bv);
    Ok(Tensor::from_op(
        vec![1, cout, h, w],
        out,
        Op::Conv2d {
            input: input.clone(),
            weight: weight.clone(),
            bias: bias.clone(),
        },
    ))
}

pub(super) fn conv2d_vjp(input: &Tensor, weight: &Tensor, bias: &Tensor, dout: &[f32]) {
    let (_, cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let cout = weight.shape()[0];

    if bias.tracked() {
        let mut db = vec![0.0f32; cout];
        for o in 0..cout {
            let mut acc = 0.0f64;
            for p in 0..h * w {
                acc += dout[o * h * w + p] as f64;
            }
            db[o] = acc as f32;
        }
        bias.accumulate_grad(&db);
    }

    if weight.tracked() {
        let xv = input.data();
        let mut dw = vec![0.0f32; cout * cin * 9];
        for o in 0..cout {
            for i in 0..cin {
                for ky in 0..3usize {
                    for kx in 0..3usize {
                        let mut acc = 0.0f64;
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for x in 0..w {
                                let sx = x as isize + kx as isize - 1;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                acc += dout[(o * h + y) * w + x] as f64
                                    * xv[(i * h + sy as usize) * w + sx as usize] as f64;
                            }
                        }
                        dw[((o * cin + i) * 3 + ky) * 3 + kx] = acc as f32;
                    }
                }
            }
        }
        drop(xv);
        weight.accumulate_grad(&dw);
    }

    if input.tracked() {
        let wv = weight.data();
        let mut dx = vec![0.0f32; cin * h * w];
        for i in 0..cin {
            for sy in 0..h {
                for sx in 0..w {
                    let mut acc = 0.0f64;
                    for o in 0..cout {
                        for ky in 0..3usize {
                            let y = sy as isize - (ky as isize - 1);
                            if y < 0 || y >= h as isize {
                                continue;
                            }
                            for kx in 0..3usize {
                                let x = sx as isize - (kx as isize - 1);
                                if x < 0 || x >= w as isize {
                                    continue;
                                }
                                acc += dout[(o * h + y as usize) * w + x as usize] as f64
                                    * wv[((o * cin + i) * 3 + ky) * 3 + kx] as f64;
                            }
                        }
                    }
                    dx[(i * h + sy) * w + sx] = acc as f32;
                }
            }
        }
        drop(wv);
        input.accumulate_grad(&dx);
    }
}

/// Fixed 2× bilinear upsampling (half-pixel centers), (1,C,H,W) → (1,C,2H,2W).
pub fn upsample2x_bilinear(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = nchw("upsample2x_bilinear", x)?;
    let (oh, ow) = (2 * h, 2 * w);
    let xv = x.data();
    let mut out = vec![0.0f32; n * c * oh * ow];
    for b in 0..n {
        for ch in 0..c {
            let src = (b * c + ch) * h * w;
            let dst = (b * c + ch) * oh * ow;
            for oy in 0..oh {
                let sy = ((oy as f32 + 0.5) / 2.0 - 0.5).clamp(0.0, (h - 1) as f32);
                let y0 = sy.floor() as usize;
                let y1 = (y0 + 1).min(h - 1);
                let fy = sy - y0 as f32;
                for ox in 0..ow {
                    let sx = ((ox as f32 + 0.5) / 2.0 - 0.5).clamp(0.0, (w - 1) as f32);
                    let x0 = sx.floor() as usize;
                    let x1 = (x0 + 1).min(w - 1);
                    let fx = sx - x0 as f32;
                    let v = xv[src + y0 * w + x0] * (1.0 - fy) * (1.0 - fx)
                        + xv[src + y0 * w + x1] * (1.0 - fy) * fx
                        + xv[src + y1 * w + x0] * fy * (1.0 - fx)
                        + xv[src + y1 * w + x1] * fy * fx;
                    out[dst + oy * ow + ox] = v;
                }
            }
        }
    }
    drop(xv);
    Ok(Tensor::from_op(
        vec![n, c, oh, ow],
        out,
        Op::Upsample2x(x.clone()),
    ))
}

pub(super) fn upsample2x_vjp(in_shape: &[usize], dout: &[f32]) -> Vec<f32> {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![0.0f32; n * c * h * w];
    for b in 0..n {
        for ch in 0..c {
            let src = (b * c + ch) * h * w;
            let dst = (b * c + ch) * oh * ow;
            for oy in 0..oh {
                let sy = ((oy as f32 + 0.5) / 2.0 - 0.5).clamp(0.0, (h - 1) as f32);
                let y0 = sy.floor() as usize;
                let y1 = (y0 + 1).min(h - 1);
                let fy = sy - y0 as f32;
                for ox in 0..ow {
                    let sx = ((ox as f32 + 0.5) / 2.0 - 0.5).clamp(0.0, (w - 1) as f32);
                    let x0 = sx.floor() as usize;
                    let x1 = (x0 + 1).min(w - 1);
                    let fx = sx - x0 as f32;
                    let d = dout[dst + oy * ow + ox];
                    dx[src + y0 * w + x0] += d * (1.0 - fy) * (1.0 - fx);
                    dx[src + y0 * w + x1] += d * (1.0 - fy) * fx;
                    dx[src + y1 * w + x0] += d * fy * (1.0 - fx);
                    dx[src + y1 * w + x1] += d * fy * fx;
                }
            }
        }
    }
    dx
}

/// Gather-style resampling. For each target pixel p of the grid,
/// `out(p) = bilinear(source, p + grid(p))` with clamp-to-edge; grid is
/// (1,2,Ho,Wo) holding (dy,dx) displacements and is treated as a constant
/// (a tracked grid is rejected).
pub fn bilinear_sample(source: &Tensor, grid: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = nchw("bilinear_sample", source)?;
    let (gn, gc, oh, ow) = nchw("bilinear_sample", grid)?;
    if gn != n || gc != 2 {
        return Err(Error::ShapeMismatch {
            op: "bilinear_sample",
            lhs: source.shape().to_vec(),
            rhs: grid.shape().to_vec(),
        });
    }
    if grid.tracked() {
        return Err(Error::invalid(
            "bilinear_sample grid must be a constant (no gradient path to flow)".to_string(),
        ));
    }
    let sv = source.data();
    let gv = grid.data();
    let mut out = vec![0.0f32; n * c * oh * ow];
    let gplane = oh * ow;
    for oy in 0..oh {
        for ox in 0..ow {
            let taps = sample_taps(&gv, gplane, oy, ox, ow, h, w);
            for ch in 0..c {
                let base = ch * h * w;
                let v = sv[base + taps.i00] * taps.w00
                    + sv[base + taps.i01] * taps.w01
                    + sv[base + taps.i10] * taps.w10
                    + sv[base + taps.i11] * taps.w11;
                out[ch * gplane + oy * ow + ox] = v;
            }
        }
    }
    drop(sv);
    drop(gv);
    Ok(Tensor::from_op(
        vec![n, c, oh, ow],
        out,
        Op::BilinearSample {
            source: source.clone(),
            grid: grid.clone(),
        },
    ))
}

struct Taps {
    i00: usize,
    i01: usize,
    i10: usize,
    i11: usize,
    w00: f32,
    w01: f32,
    w10: f32,
    w11: f32,
}

fn sample_taps(grid: &[f32], gplane: usize, oy: usize, ox: usize, ow: usize, h: usize, w: usize) -> Taps {
    let dy = grid[oy * ow + ox];
    let dx = grid[gplane + oy * ow + ox];
    let sy = (oy as f32 + dy).clamp(0.0, (h - 1) as f32);
    let sx = (ox as f32 + dx).clamp(0.0, (w - 1) as f32);
    let y0 = sy.floor() as usize;
    let x0 = sx.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = sy - y0 as f32;
    let fx = sx - x0 as f32;
    Taps {
        i00: y0 * w + x0,
        i01: y0 * w + x1,
        i10: y1 * w + x0,
        i11: y1 * w + x1,
        w00: (1.0 - fy) * (1.0 - fx),
        w01: (1.0 - fy) * fx,
        w10: fy * (1.0 - fx),
        w11: fy * fx,
    }
}

pub(super) fn bilinear_sample_vjp(
    src_shape: &[usize],
    grid: &[f32],
    grid_shape: &[usize],
    dout: &[f32],
) -> Vec<f32> {
    let (n, c, h, w) = (src_shape[0], src_shape[1], src_shape[2], src_shape[3]);
    let (oh, ow) = (grid_shape[2], grid_shape[3]);
    let gplane = oh * ow;
    let mut dsrc = vec![0.0f32; n * c * h * w];
    for oy in 0..oh {
        for ox in 0..ow {
            let taps = sample_taps(grid, gplane, oy, ox, ow, h, w);
            for ch in 0..c {
                let base = ch * h * w;
                let d = dout[ch * gplane + oy * ow + ox];
                dsrc[base + taps.i00] += d * taps.w00;
                dsrc[base + taps.i01] += d * taps.w01;
                dsrc[base + taps.i10] += d * taps.w10;
                dsrc[base + taps.i11] += d * taps.w11;
            }
        }
    }
    dsrc
}

/// Name-dispatched entry over the fixed op set. Arity and shapes follow the
/// per-op rules; unknown names are rejected.
pub fn forward_op(name: &str, inputs: &[&Tensor]) -> Result<Tensor> {
    let unary = |f: fn(&Tensor) -> Result<Tensor>| -> Result<Tensor> {
        match inputs {
            [x] => f(x),
            _ => Err(Error::invalid(format!(
                "{name} takes exactly 1 input, got {}",
                inputs.len()
            ))),
        }
    };
    let binary = |f: fn(&Tensor, &Tensor) -> Result<Tensor>| -> Result<Tensor> {
        match inputs {
            [a, b] => f(a, b),
            _ => Err(Error::invalid(format!(
                "{name} takes exactly 2 inputs, got {}",
                inputs.len()
            ))),
        }
    };
    match name {
        "add" => binary(add),
        "sub" => binary(sub),
        "mul" => binary(mul),
        "abs" => unary(abs),
        "exp" => unary(exp),
        "log" => unary(log),
        "relu" => unary(relu),
        "conv2d" => match inputs {
            [x, w, b] => conv2d(x, w, b),
            _ => Err(Error::invalid(format!(
                "conv2d takes exactly 3 inputs (input, weight, bias), got {}",
                inputs.len()
            ))),
        },
        "upsample2x_bilinear" => unary(upsample2x_bilinear),
        "softmax_channel" => unary(softmax_channel),
        "reduce_mean" => unary(reduce_mean),
        "reduce_sum" => unary(reduce_sum),
        "elemwise_max" => binary(elemwise_max),
        "bilinear_sample" => binary(bilinear_sample),
        other => Err(Error::UnknownOp(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(actual: &[f32], expected: &[f32], tol: f32) {
        assert_eq!(actual.len(), expected.len());
        for (i, (a, e)) in actual.iter().zip(expected).enumerate() {
            assert!((a - e).abs() < tol, "[{i}] {a} vs {e}");
        }
    }

    #[test]
    fn relu_definition() {
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).unwrap().to_vec(), vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_symmetry_and_scalar_value() {
        let x = Tensor::from_vec(&[1, 2, 1, 1], vec![0.0, 0.0]).unwrap();
        assert_close(&softmax_channel(&x).unwrap().to_vec(), &[0.5, 0.5], 1e-7);

        // e^1/(e^1+e^0), e^0/(e^1+e^0)
        let y = Tensor::from_vec(&[1, 2, 1, 1], vec![1.0, 0.0]).unwrap();
        assert_close(&softmax_channel(&y).unwrap().to_vec(), &[0.7311, 0.2689], 1e-4);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::from_vec(&[1, 3, 2, 2], (0..12).map(|i| (i as f32) * 0.7 - 4.0).collect())
            .unwrap();
        let s = softmax_channel(&x).unwrap();
        let v = s.to_vec();
        for p in 0..4 {
            let sum: f32 = (0..3).map(|c| v[c * 4 + p]).sum();
            assert!((sum - 1.0).abs() < 1e-5);
            for c in 0..3 {
                let e = v[c * 4 + p];
                assert!((0.0..=1.0).contains(&e));
            }
        }
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let a = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let msg = add(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("add"), "{msg}");
        assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn forward_op_dispatch_and_unknown_name() {
        let a = Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap();
        let out = forward_op("abs", &[&a]).unwrap();
        assert_eq!(out.to_vec(), vec![1.0, 2.0]);
        assert!(matches!(
            forward_op("matmul", &[&a]),
            Err(Error::UnknownOp(_))
        ));
        assert!(forward_op("abs", &[&a, &a]).is_err());
    }

    #[test]
    fn log_and_exp_are_clamped() {
        let x = Tensor::from_vec(&[3], vec![0.0, 1e-12, 1.0]).unwrap();
        let l = log(&x).unwrap().to_vec();
        assert!((l[0] - LOG_FLOOR.ln()).abs() < 1e-6);
        assert!((l[1] - LOG_FLOOR.ln()).abs() < 1e-6);
        assert!(l[2].abs() < 1e-7);

        let y = Tensor::from_vec(&[2], vec![100.0, -100.0]).unwrap();
        let e = exp(&y).unwrap().to_vec();
        assert!(e.iter().all(|v| v.is_finite()));
        assert!((e[0] - EXP_CLAMP.exp()).abs() < 1.0);
    }

    #[test]
    fn conv2d_identity_kernel() {
        // kernel with 1 at center copies the input channel
        let x = Tensor::from_vec(&[1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut k = vec![0.0f32; 9];
        k[4] = 1.0;
        let w = Tensor::from_vec(&[1, 1, 3, 3], k).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let y = conv2d(&x, &w, &b).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn conv2d_zero_padding_sums_window() {
        // all-ones kernel on all-ones 2x2 input: corners see a 2x2 window
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0; 4]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let y = conv2d(&x, &w, &b).unwrap();
        assert_eq!(y.to_vec(), vec![4.0; 4]);
    }

    #[test]
    fn conv2d_rejects_bad_shapes() {
        let x = Tensor::from_vec(&[1, 2, 2, 2], vec![0.0; 8]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 3, 3], vec![0.0; 9]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        assert!(conv2d(&x, &w, &b).is_err());
    }

    #[test]
    fn upsample_doubles_dims_and_preserves_constants() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![3.0; 4]).unwrap();
        let y = upsample2x_bilinear(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert_close(&y.to_vec(), &[3.0; 16], 1e-7);
    }

    #[test]
    fn bilinear_sample_zero_grid_is_identity() {
        let x = Tensor::from_vec(&[1, 2, 2, 2], (0..8).map(|i| i as f32).collect()).unwrap();
        let g = Tensor::zeros(&[1, 2, 2, 2]);
        let y = bilinear_sample(&x, &g).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn bilinear_sample_rejects_tracked_grid() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![0.0; 4]).unwrap();
        let g = Tensor::param(&[1, 2, 2, 2], vec![0.0; 8]).unwrap();
        assert!(bilinear_sample(&x, &g).is_err());
    }
}
