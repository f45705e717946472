use alloc::vec;
use alloc::vec::Vec;

use super::{ensure_same, ConvKernel, Shape4, Tensor4};
use crate::error::{Error, Result};

/// `rhs` either matches `lhs` or is `(B, 1, H, W)` and is broadcast over channels.
fn check_broadcast(op: &'static str, lhs: Shape4, rhs: Shape4) -> Result<()> {
    if rhs == lhs || rhs == lhs.with_c(1) {
        Ok(())
    } else {
        Err(Error::Dimension { op, lhs, rhs })
    }
}

/// Index into a possibly channel-broadcast operand.
#[inline]
fn bcast_plane(t: &Tensor4, b: usize, c: usize) -> &[f64] {
    if t.shape.c == 1 {
        t.plane(b, 0)
    } else {
        t.plane(b, c)
    }
}

fn zip_bcast(
    op: &'static str,
    a: &Tensor4,
    b: &Tensor4,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor4> {
    check_broadcast(op, a.shape, b.shape)?;
    let s = a.shape;
    let mut out = Vec::with_capacity(s.len());
    for bi in 0..s.b {
        for c in 0..s.c {
            let pa = a.plane(bi, c);
            let pb = bcast_plane(b, bi, c);
            out.extend(pa.iter().zip(pb).map(|(&x, &y)| f(x, y)));
        }
    }
    Ok(Tensor4::from_raw(s, out))
}

pub fn add(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    zip_bcast("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    zip_bcast("sub", a, b, |x, y| x - y)
}

pub fn mul(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    zip_bcast("mul", a, b, |x, y| x * y)
}

pub fn scale(a: &Tensor4, s: f64) -> Tensor4 {
    a.map(|v| v * s)
}

pub fn relu(a: &Tensor4) -> Tensor4 {
    a.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// `a ⊙ m + b ⊙ (1 − m)`; `m` may be single-channel.
pub fn lerp(a: &Tensor4, b: &Tensor4, m: &Tensor4) -> Result<Tensor4> {
    ensure_same("lerp", a.shape, b.shape)?;
    check_broadcast("lerp", a.shape, m.shape)?;
    let s = a.shape;
    let mut out = Vec::with_capacity(s.len());
    for bi in 0..s.b {
        for c in 0..s.c {
            let pm = bcast_plane(m, bi, c);
            for ((&x, &y), &w) in a.plane(bi, c).iter().zip(b.plane(bi, c)).zip(pm) {
                out.push(x * w + y * (1.0 - w));
            }
        }
    }
    Ok(Tensor4::from_raw(s, out))
}

/// Reduce a full-shape gradient onto a possibly channel-broadcast operand.
pub(crate) fn reduce_to(grad: &Tensor4, target: Shape4) -> Tensor4 {
    if grad.shape == target {
        return grad.clone();
    }
    let s = grad.shape;
    let mut out = Tensor4::zeros(target);
    for b in 0..s.b {
        for c in 0..s.c {
            let dst = out.plane_mut(b, 0);
            for (d, g) in dst.iter_mut().zip(grad.plane(b, c)) {
                *d += g;
            }
        }
    }
    out
}

/// out[y, x0..x1] += w * src[y + dy, x0 + dx .. x1 + dx] restricted to the
/// rows/cols where both indices are in range.
#[inline]
fn shifted_axpy(dst: &mut [f64], src: &[f64], h: usize, w: usize, dy: isize, dx: isize, k: f64) {
    let y_lo = (-dy).max(0) as usize;
    let y_hi = (h as isize - dy).min(h as isize).max(0) as usize;
    let x_lo = (-dx).max(0) as usize;
    let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
    if x_lo >= x_hi {
        return;
    }
    for y in y_lo..y_hi {
        let sy = (y as isize + dy) as usize;
        let d = &mut dst[y * w + x_lo..y * w + x_hi];
        let sx0 = (x_lo as isize + dx) as usize;
        let s = &src[sy * w + sx0..sy * w + sx0 + (x_hi - x_lo)];
        for (o, &v) in d.iter_mut().zip(s) {
            *o += k * v;
        }
    }
}

/// Σ a[y, x] * b[y + dy, x + dx] over in-range positions.
#[inline]
fn shifted_dot(a: &[f64], b: &[f64], h: usize, w: usize, dy: isize, dx: isize) -> f64 {
    let y_lo = (-dy).max(0) as usize;
    let y_hi = (h as isize - dy).min(h as isize).max(0) as usize;
    let x_lo = (-dx).max(0) as usize;
    let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
    let mut acc = 0.0;
    if x_lo >= x_hi {
        return acc;
    }
    for y in y_lo..y_hi {
        let sy = (y as isize + dy) as usize;
        let sx0 = (x_lo as isize + dx) as usize;
        let ra = &a[y * w + x_lo..y * w + x_hi];
        let rb = &b[sy * w + sx0..sy * w + sx0 + (x_hi - x_lo)];
        acc += row_dot(ra, rb);
    }
    acc
}

/// Four independent accumulators so the loop vectorizes.
#[inline]
fn row_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(p, q)| p * q)
        .sum();
    for (p, q) in ca.zip(cb) {
        for l in 0..4 {
            lanes[l] += p[l] * q[l];
        }
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// 3×3 convolution, zero padding 1, stride 1.
pub fn conv2d(x: &Tensor4, k: &ConvKernel) -> Result<Tensor4> {
    let s = x.shape;
    if s.c != k.c_in() {
        return Err(Error::Dimension {
            op: "conv2d",
            lhs: s,
            rhs: k.weight.shape,
        });
    }
    let co_n = k.c_out();
    let out_shape = s.with_c(co_n);
    let mut out = Tensor4::zeros(out_shape);
    for b in 0..s.b {
        for co in 0..co_n {
            let dst = out.plane_mut(b, co);
            dst.fill(k.bias[co]);
            for ci in 0..s.c {
                let src = x.plane(b, ci);
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wv = k.weight.at(co, ci, ky, kx);
                        if wv != 0.0 {
                            shifted_axpy(dst, src, s.h, s.w, ky as isize - 1, kx as isize - 1, wv);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`conv2d`] w.r.t. input, weights and bias.
pub(crate) fn conv2d_backward(
    x: &Tensor4,
    k: &ConvKernel,
    g: &Tensor4,
    need_input: bool,
) -> (Option<Tensor4>, Tensor4, Vec<f64>) {
    let s = x.shape;
    let co_n = k.c_out();
    let mut gw = Tensor4::zeros(k.weight.shape);
    let mut gb = vec![0.0; co_n];
    let mut gx = need_input.then(|| Tensor4::zeros(s));
    for b in 0..s.b {
        for co in 0..co_n {
            let gp = g.plane(b, co);
            gb[co] += gp.iter().sum::<f64>();
            for ci in 0..s.c {
                let xp = x.plane(b, ci);
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (dy, dx) = (ky as isize - 1, kx as isize - 1);
                        let i = k.weight.shape.index(co, ci, ky, kx);
                        gw.data[i] += shifted_dot(gp, xp, s.h, s.w, dy, dx);
                        if let Some(gx) = gx.as_mut() {
                            let wv = k.weight.data[i];
                            if wv != 0.0 {
                                // out[y] += w * x[y + d]  =>  gx[y'] += w * g[y' - d]
                                shifted_axpy(gx.plane_mut(b, ci), gp, s.h, s.w, -dy, -dx, wv);
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

pub fn upsample_nearest2x(x: &Tensor4) -> Tensor4 {
    let s = x.shape;
    let os = s.with_hw(s.h * 2, s.w * 2);
    let mut out = Tensor4::zeros(os);
    for b in 0..s.b {
        for c in 0..s.c {
            let src = x.plane(b, c);
            let dst = out.plane_mut(b, c);
            for y in 0..os.h {
                let row = &src[(y / 2) * s.w..(y / 2 + 1) * s.w];
                for (xo, d) in dst[y * os.w..(y + 1) * os.w].iter_mut().enumerate() {
                    *d = row[xo / 2];
                }
            }
        }
    }
    out
}

pub(crate) fn upsample_nearest2x_backward(g: &Tensor4) -> Tensor4 {
    // Sum over each 2×2 block.
    let mut out = avgpool2x(g).expect("upsampled gradient has even dims");
    out.scale_assign(4.0);
    out
}

/// 2×2 mean pooling with stride 2.
pub fn avgpool2x(x: &Tensor4) -> Result<Tensor4> {
    let s = x.shape;
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::shape(
            "avgpool2x",
            alloc::format!("odd spatial dims in {s}"),
        ));
    }
    let os = s.with_hw(s.h / 2, s.w / 2);
    let mut out = Tensor4::zeros(os);
    for b in 0..s.b {
        for c in 0..s.c {
            let src = x.plane(b, c);
            let dst = out.plane_mut(b, c);
            for y in 0..os.h {
                let r0 = &src[2 * y * s.w..(2 * y + 1) * s.w];
                let r1 = &src[(2 * y + 1) * s.w..(2 * y + 2) * s.w];
                for xo in 0..os.w {
                    dst[y * os.w + xo] =
                        (r0[2 * xo] + r0[2 * xo + 1] + r1[2 * xo] + r1[2 * xo + 1]) * 0.25;
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn avgpool2x_backward(g: &Tensor4) -> Tensor4 {
    let mut out = upsample_nearest2x(g);
    out.scale_assign(0.25);
    out
}

fn check_flow(op: &'static str, src: Shape4, flow: Shape4) -> Result<()> {
    if flow.c != 2 {
        return Err(Error::shape(
            op,
            alloc::format!("flow must have 2 channels, got {flow}"),
        ));
    }
    if flow.b != src.b || flow.h != src.h || flow.w != src.w {
        return Err(Error::Dimension {
            op,
            lhs: src,
            rhs: flow,
        });
    }
    Ok(())
}

/// Clamped source coordinate along one axis: lower index, upper index,
/// fractional weight, and whether the raw coordinate was inside the frame.
#[inline]
fn axis_coord(pos: usize, offset: f64, n: usize) -> (usize, usize, f64, bool) {
    let raw = pos as f64 + offset;
    let max = (n - 1) as f64;
    let inside = (0.0..=max).contains(&raw);
    let c = raw.clamp(0.0, max);
    let i0 = libm::floor(c) as usize;
    let i0 = i0.min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, c - i0 as f64, inside)
}

/// Backward bilinear read: `out(b,c,y,x) = src(b,c,y+dy,x+dx)` with
/// channel 0 of `flow` = dy, channel 1 = dx, in pixels, clamp-to-edge.
pub fn bilinear_sample(src: &Tensor4, flow: &Tensor4) -> Result<Tensor4> {
    let s = src.shape;
    check_flow("bilinear_sample", s, flow.shape)?;
    let mut out = Tensor4::zeros(s);
    for b in 0..s.b {
        let fy = flow.plane(b, 0);
        let fx = flow.plane(b, 1);
        for y in 0..s.h {
            for x in 0..s.w {
                let p = y * s.w + x;
                let (y0, y1, wy, _) = axis_coord(y, fy[p], s.h);
                let (x0, x1, wx, _) = axis_coord(x, fx[p], s.w);
                for c in 0..s.c {
                    let pl = src.plane(b, c);
                    let a = pl[y0 * s.w + x0];
                    let bb = pl[y0 * s.w + x1];
                    let cc = pl[y1 * s.w + x0];
                    let d = pl[y1 * s.w + x1];
                    // Difference form keeps constants exact.
                    let top = a + wx * (bb - a);
                    let bot = cc + wx * (d - cc);
                    out.data[s.index(b, c, y, x)] = top + wy * (bot - top);
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`bilinear_sample`]: gradient w.r.t. `src` and w.r.t. `flow`.
/// Clamped coordinates contribute zero flow gradient.
pub(crate) fn bilinear_sample_backward(
    src: &Tensor4,
    flow: &Tensor4,
    g: &Tensor4,
    need_flow: bool,
) -> (Tensor4, Option<Tensor4>) {
    let s = src.shape;
    let mut gs = Tensor4::zeros(s);
    let mut gf = need_flow.then(|| Tensor4::zeros(flow.shape));
    for b in 0..s.b {
        for y in 0..s.h {
            for x in 0..s.w {
                let p = y * s.w + x;
                let (y0, y1, wy, in_y) = axis_coord(y, flow.plane(b, 0)[p], s.h);
                let (x0, x1, wx, in_x) = axis_coord(x, flow.plane(b, 1)[p], s.w);
                let mut d_wy = 0.0;
                let mut d_wx = 0.0;
                for c in 0..s.c {
                    let go = g.data[s.index(b, c, y, x)];
                    {
                        let gp = gs.plane_mut(b, c);
                        gp[y0 * s.w + x0] += go * (1.0 - wy) * (1.0 - wx);
                        gp[y0 * s.w + x1] += go * (1.0 - wy) * wx;
                        gp[y1 * s.w + x0] += go * wy * (1.0 - wx);
                        gp[y1 * s.w + x1] += go * wy * wx;
                    }
                    if gf.is_some() {
                        let pl = src.plane(b, c);
                        let a = pl[y0 * s.w + x0];
                        let bb = pl[y0 * s.w + x1];
                        let cc = pl[y1 * s.w + x0];
                        let d = pl[y1 * s.w + x1];
                        let top = a + wx * (bb - a);
                        let bot = cc + wx * (d - cc);
                        d_wy += go * (bot - top);
                        d_wx += go * ((1.0 - wy) * (bb - a) + wy * (d - cc));
                    }
                }
                if let Some(gf) = gf.as_mut() {
                    if in_y && y0 != y1 {
                        gf.data[flow.shape.index(b, 0, y, x)] = d_wy;
                    }
                    if in_x && x0 != x1 {
                        gf.data[flow.shape.index(b, 1, y, x)] = d_wx;
                    }
                }
            }
        }
    }
    (gs, gf)
}
