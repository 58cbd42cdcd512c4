//! Forward and backward kernels over plain tensors.
//!
//! Nothing here knows about the tape; `tape.rs` records which kernel ran and
//! calls the matching backward.

use crate::error::{config_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Output extent of a convolution along one axis, or `None` when the window
/// does not fit.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

pub fn conv2d_out_shape(x: Shape, w: Shape, stride: usize, pad: usize) -> Result<Shape> {
    if x.c != w.c {
        return Err(config_err!(
            "conv2d channel mismatch: input has {} channels, weights expect {}",
            x.c,
            w.c
        ));
    }
    if !matches!(w.h, 1 | 3) || !matches!(w.w, 1 | 3) {
        return Err(config_err!("conv2d kernel must be 1x1 or 3x3, got {}x{}", w.h, w.w));
    }
    let oh = conv_out_dim(x.h, w.h, stride, pad);
    let ow = conv_out_dim(x.w, w.w, stride, pad);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Shape::new(x.n, w.n, oh, ow),
        _ => Err(config_err!(
            "conv2d produces zero-size output for input {:?}, kernel {}x{}, stride {stride}, pad {pad}",
            x,
            w.h,
            w.w
        )),
    }
}

/// Range of output positions `o` for which `o * stride + k - pad` lands in
/// `[0, input)`.
#[inline]
fn valid_range(out: usize, input: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // o*stride + k >= pad
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // o*stride + k - pad <= input - 1
    let hi_num = input + pad - 1;
    let hi = if hi_num < k { 0 } else { ((hi_num - k) / stride + 1).min(out) };
    (lo.min(hi), hi)
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = w.shape();
    let os = conv2d_out_shape(xs, ws, stride, pad)?;
    if let Some(b) = b {
        if b.numel() != ws.n {
            return Err(config_err!("conv2d bias has {} entries, expected {}", b.numel(), ws.n));
        }
    }
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![T::zero(); os.numel()];
    let (kh, kw) = (ws.h, ws.w);
    for n in 0..xs.n {
        for co in 0..ws.n {
            let obase = os.index(n, co, 0, 0);
            let oplane = &mut out[obase..obase + os.plane()];
            if let Some(b) = b {
                oplane.fill(b.data()[co]);
            }
            for ci in 0..xs.c {
                let ibase = xs.index(n, ci, 0, 0);
                let iplane = &xd[ibase..ibase + xs.plane()];
                for ky in 0..kh {
                    let (oy0, oy1) = valid_range(os.h, xs.h, ky, stride, pad);
                    for kx in 0..kw {
                        let wv = wd[ws.index(co, ci, ky, kx)];
                        let (ox0, ox1) = valid_range(os.w, xs.w, kx, stride, pad);
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - pad;
                            let irow = &iplane[iy * xs.w..(iy + 1) * xs.w];
                            let orow = &mut oplane[oy * os.w..(oy + 1) * os.w];
                            if stride == 1 {
                                let shift = ox0 + kx - pad;
                                let src = &irow[shift..shift + (ox1 - ox0)];
                                for (o, &i) in orow[ox0..ox1].iter_mut().zip(src) {
                                    *o += wv * i;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    orow[ox] += wv * irow[ox * stride + kx - pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(os, out)
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> ConvGrads<T> {
    let xs = x.shape();
    let ws = w.shape();
    let os = grad_out.shape();
    let (xd, wd, gd) = (x.data(), w.data(), grad_out.data());
    let mut gx = need_input.then(|| vec![T::zero(); xs.numel()]);
    let mut gw = need_weight.then(|| vec![T::zero(); ws.numel()]);
    let (kh, kw) = (ws.h, ws.w);

    for n in 0..xs.n {
        for co in 0..ws.n {
            let obase = os.index(n, co, 0, 0);
            let gplane = &gd[obase..obase + os.plane()];
            for ci in 0..xs.c {
                let ibase = xs.index(n, ci, 0, 0);
                for ky in 0..kh {
                    let (oy0, oy1) = valid_range(os.h, xs.h, ky, stride, pad);
                    for kx in 0..kw {
                        let widx = ws.index(co, ci, ky, kx);
                        let wv = wd[widx];
                        let (ox0, ox1) = valid_range(os.w, xs.w, kx, stride, pad);
                        let mut wacc = T::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - pad;
                            let grow = &gplane[oy * os.w..(oy + 1) * os.w];
                            let irow_start = ibase + iy * xs.w;
                            if let Some(gx) = gx.as_mut() {
                                let irow = &mut gx[irow_start..irow_start + xs.w];
                                for ox in ox0..ox1 {
                                    irow[ox * stride + kx - pad] += wv * grow[ox];
                                }
                            }
                            if gw.is_some() {
                                let irow = &xd[irow_start..irow_start + xs.w];
                                for ox in ox0..ox1 {
                                    wacc += grow[ox] * irow[ox * stride + kx - pad];
                                }
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw[widx] += wacc;
                        }
                    }
                }
            }
        }
    }

    let gb = need_bias.then(|| {
        let mut acc = vec![T::zero(); ws.n];
        for n in 0..os.n {
            for (co, a) in acc.iter_mut().enumerate() {
                let base = os.index(n, co, 0, 0);
                *a += gd[base..base + os.plane()].iter().copied().sum::<T>();
            }
        }
        Tensor::from_vec(Shape { n: ws.n, c: 1, h: 1, w: 1 }, acc).unwrap()
    });

    ConvGrads {
        input: gx.map(|v| Tensor::from_vec(xs, v).unwrap()),
        weight: gw.map(|v| Tensor::from_vec(ws, v).unwrap()),
        bias: gb,
    }
}

/// Half-pixel source coordinate of output index `dst` when mapping an axis of
/// length `input` onto one of length `output`.
#[inline]
pub fn half_pixel_source<T: Scalar>(dst: usize, input: usize, output: usize) -> T {
    T::from_f64_lossy((dst as f64 + 0.5) * input as f64 / output as f64 - 0.5)
}

/// Continuous coordinate split into the two neighbouring indices and the
/// interpolation weight of the upper one. Coordinates are clamped to
/// `[0, len - 1]`; `inside` reports whether the clamp was inactive.
#[derive(Clone, Copy)]
struct Tap<T> {
    lo: usize,
    hi: usize,
    frac: T,
    inside: bool,
}

#[inline]
fn tap<T: Scalar>(coord: T, len: usize) -> Tap<T> {
    let max = T::of_usize(len - 1);
    let inside = coord >= T::zero() && coord <= max;
    let c = coord.max(T::zero()).min(max);
    let lo = c.floor().to_usize().unwrap_or(0).min(len - 1);
    let hi = (lo + 1).min(len - 1);
    Tap {
        lo,
        hi,
        frac: c - T::of_usize(lo),
        inside,
    }
}

pub fn grid_sample_out_shape(x: Shape, coords: Shape) -> Result<Shape> {
    if coords.c != 2 {
        return Err(config_err!("sampling coordinates need 2 channels, got {}", coords.c));
    }
    if coords.n != x.n {
        return Err(config_err!(
            "sampling coordinates batch {} does not match input batch {}",
            coords.n,
            x.n
        ));
    }
    Shape::new(x.n, x.c, coords.h, coords.w)
}

/// Bilinear gather at continuous coordinates in input-pixel units. Channel 0
/// of `coords` is the column coordinate, channel 1 the row coordinate.
/// Out-of-range coordinates clamp to the border.
pub fn grid_sample_forward<T: Scalar>(x: &Tensor<T>, coords: &Tensor<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    let cs = coords.shape();
    let os = grid_sample_out_shape(xs, cs)?;
    let (xd, cd) = (x.data(), coords.data());
    let mut out = vec![T::zero(); os.numel()];
    let one = T::one();
    for n in 0..xs.n {
        for oy in 0..os.h {
            for ox in 0..os.w {
                let tx = tap(cd[cs.index(n, 0, oy, ox)], xs.w);
                let ty = tap(cd[cs.index(n, 1, oy, ox)], xs.h);
                let (w00, w01) = ((one - ty.frac) * (one - tx.frac), (one - ty.frac) * tx.frac);
                let (w10, w11) = (ty.frac * (one - tx.frac), ty.frac * tx.frac);
                for c in 0..xs.c {
                    let base = xs.index(n, c, 0, 0);
                    let r0 = base + ty.lo * xs.w;
                    let r1 = base + ty.hi * xs.w;
                    out[os.index(n, c, oy, ox)] = w00 * xd[r0 + tx.lo]
                        + w01 * xd[r0 + tx.hi]
                        + w10 * xd[r1 + tx.lo]
                        + w11 * xd[r1 + tx.hi];
                }
            }
        }
    }
    Tensor::from_vec(os, out)
}

pub fn grid_sample_backward<T: Scalar>(
    x: &Tensor<T>,
    coords: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
    need_coords: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let xs = x.shape();
    let cs = coords.shape();
    let os = grad_out.shape();
    let (xd, cd, gd) = (x.data(), coords.data(), grad_out.data());
    let mut gx = need_input.then(|| vec![T::zero(); xs.numel()]);
    let mut gc = need_coords.then(|| vec![T::zero(); cs.numel()]);
    let one = T::one();
    for n in 0..xs.n {
        for oy in 0..os.h {
            for ox in 0..os.w {
                let tx = tap(cd[cs.index(n, 0, oy, ox)], xs.w);
                let ty = tap(cd[cs.index(n, 1, oy, ox)], xs.h);
                let (w00, w01) = ((one - ty.frac) * (one - tx.frac), (one - ty.frac) * tx.frac);
                let (w10, w11) = (ty.frac * (one - tx.frac), ty.frac * tx.frac);
                let mut dcx = T::zero();
                let mut dcy = T::zero();
                for c in 0..xs.c {
                    let g = gd[os.index(n, c, oy, ox)];
                    let base = xs.index(n, c, 0, 0);
                    let r0 = base + ty.lo * xs.w;
                    let r1 = base + ty.hi * xs.w;
                    if let Some(gx) = gx.as_mut() {
                        gx[r0 + tx.lo] += w00 * g;
                        gx[r0 + tx.hi] += w01 * g;
                        gx[r1 + tx.lo] += w10 * g;
                        gx[r1 + tx.hi] += w11 * g;
                    }
                    if gc.is_some() {
                        let (v00, v01) = (xd[r0 + tx.lo], xd[r0 + tx.hi]);
                        let (v10, v11) = (xd[r1 + tx.lo], xd[r1 + tx.hi]);
                        if tx.inside {
                            dcx += g * ((one - ty.frac) * (v01 - v00) + ty.frac * (v11 - v10));
                        }
                        if ty.inside {
                            dcy += g * ((one - tx.frac) * (v10 - v00) + tx.frac * (v11 - v01));
                        }
                    }
                }
                if let Some(gc) = gc.as_mut() {
                    gc[cs.index(n, 0, oy, ox)] += dcx;
                    gc[cs.index(n, 1, oy, ox)] += dcy;
                }
            }
        }
    }
    (
        gx.map(|v| Tensor::from_vec(xs, v).unwrap()),
        gc.map(|v| Tensor::from_vec(cs, v).unwrap()),
    )
}

/// Half-pixel base coordinates for resampling an `(h_in, w_in)` grid onto
/// `(h_out, w_out)`, replicated over `batch`.
pub fn base_coords<T: Scalar>(
    batch: usize,
    h_in: usize,
    w_in: usize,
    h_out: usize,
    w_out: usize,
) -> Result<Tensor<T>> {
    for (name, v) in [("h_in", h_in), ("w_in", w_in), ("h_out", h_out), ("w_out", w_out)] {
        if v == 0 {
            return Err(config_err!("{name} must be >= 1"));
        }
    }
    let s = Shape::new(batch, 2, h_out, w_out)?;
    Ok(Tensor::from_fn(s, |_, c, y, x| {
        if c == 0 {
            half_pixel_source(x, w_in, w_out)
        } else {
            half_pixel_source(y, h_in, h_out)
        }
    }))
}

/// Bilinear resize with half-pixel mapping, sharing the gather kernel so that
/// it is bit-identical to `grid_sample_forward` at base coordinates.
pub fn bilinear_resize_forward<T: Scalar>(
    x: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let s = x.shape();
    let coords = base_coords(s.n, s.h, s.w, out_h, out_w)?;
    grid_sample_forward(x, &coords)
}

pub fn bilinear_resize_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let g = grad_out.shape();
    let coords = base_coords(s.n, s.h, s.w, g.h, g.w).expect("validated in forward");
    grid_sample_backward(x, &coords, grad_out, true, false)
        .0
        .expect("input gradient requested")
}

pub fn pixel_shuffle_forward<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 || s.c % (r * r) != 0 {
        return Err(config_err!(
            "pixel_shuffle: {} channels not divisible by r^2 = {}",
            s.c,
            r * r
        ));
    }
    let os = Shape::new(s.n, s.c / (r * r), s.h * r, s.w * r)?;
    let mut out = vec![T::zero(); os.numel()];
    for n in 0..os.n {
        for c in 0..os.c {
            for i in 0..r {
                for j in 0..r {
                    let ic = c * r * r + i * r + j;
                    for h in 0..s.h {
                        for w in 0..s.w {
                            out[os.index(n, c, h * r + i, w * r + j)] = x.at(n, ic, h, w);
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(os, out)
}

/// Inverse index map of `pixel_shuffle_forward` (space-to-depth).
pub fn pixel_unshuffle<T: Scalar>(y: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let os = y.shape();
    if r == 0 || os.h % r != 0 || os.w % r != 0 {
        return Err(config_err!("pixel_unshuffle: spatial dims not divisible by {r}"));
    }
    let s = Shape::new(os.n, os.c * r * r, os.h / r, os.w / r)?;
    let mut out = vec![T::zero(); s.numel()];
    for n in 0..os.n {
        for c in 0..os.c {
            for i in 0..r {
                for j in 0..r {
                    let ic = c * r * r + i * r + j;
                    for h in 0..s.h {
                        for w in 0..s.w {
                            out[s.index(n, ic, h, w)] = y.at(n, c, h * r + i, w * r + j);
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(s, out)
}

pub fn concat_channels_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
        return Err(config_err!("concat_channels: {:?} vs {:?}", sa, sb));
    }
    let os = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w)?;
    let mut out = Vec::with_capacity(os.numel());
    let (la, lb) = (sa.c * sa.plane(), sb.c * sb.plane());
    for n in 0..sa.n {
        out.extend_from_slice(&a.data()[n * la..(n + 1) * la]);
        out.extend_from_slice(&b.data()[n * lb..(n + 1) * lb]);
    }
    Tensor::from_vec(os, out)
}

pub fn split_channels<T: Scalar>(g: &Tensor<T>, first: usize) -> (Tensor<T>, Tensor<T>) {
    let s = g.shape();
    let sa = Shape { c: first, ..s };
    let sb = Shape { c: s.c - first, ..s };
    let (la, lb) = (sa.c * s.plane(), sb.c * s.plane());
    let mut a = Vec::with_capacity(sa.numel());
    let mut b = Vec::with_capacity(sb.numel());
    for n in 0..s.n {
        let base = n * (la + lb);
        a.extend_from_slice(&g.data()[base..base + la]);
        b.extend_from_slice(&g.data()[base + la..base + la + lb]);
    }
    (Tensor::from_vec(sa, a).unwrap(), Tensor::from_vec(sb, b).unwrap())
}
