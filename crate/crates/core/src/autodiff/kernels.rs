//! Raw loops behind the differentiable ops. Everything here works on flat
//! row-major slices; shape checking happens in the graph layer.

use crate::scalar::Scalar;

/// Output positions `o` in `0..n_out` for which `o * stride + offset` lands in `0..n_in`.
#[inline]
fn valid_range(n_out: usize, n_in: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    let last = n_in as isize - 1 - offset;
    let hi = if last < 0 { 0 } else { last / s + 1 };
    let lo = lo.max(0) as usize;
    let hi = (hi as usize).min(n_out);
    (lo, hi.max(lo))
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

/// Cross-correlation, zero padding. Kernel layout `[c_out, c_in, kh, kw]`.
pub(crate) fn conv2d_forward<S: Scalar>(g: &ConvGeom, x: &[S], k: &[S], out: &mut [S]) {
    let ConvGeom { c_in, h, w, c_out, kh, kw, stride, pad, ho, wo } = *g;
    for co in 0..c_out {
        let out_plane = &mut out[co * ho * wo..(co + 1) * ho * wo];
        for ci in 0..c_in {
            let x_plane = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_range(ho, h, stride, ky as isize - pad as isize);
                for kx in 0..kw {
                    let wgt = k[((co * c_in + ci) * kh + ky) * kw + kx];
                    if wgt == S::zero() {
                        continue;
                    }
                    let off_x = kx as isize - pad as isize;
                    let (ox_lo, ox_hi) = valid_range(wo, w, stride, off_x);
                    if ox_lo == ox_hi {
                        continue;
                    }
                    let ix_lo = ((ox_lo * stride) as isize + off_x) as usize;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let x_row = &x_plane[iy * w + ix_lo..(iy + 1) * w];
                        let o_row = &mut out_plane[oy * wo + ox_lo..oy * wo + ox_hi];
                        if stride == 1 {
                            for (o, &v) in o_row.iter_mut().zip(x_row) {
                                *o += wgt * v;
                            }
                        } else {
                            for (o, &v) in o_row.iter_mut().zip(x_row.iter().step_by(stride)) {
                                *o += wgt * v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates input and/or kernel gradients of [`conv2d_forward`].
pub(crate) fn conv2d_backward<S: Scalar>(
    g: &ConvGeom,
    x: &[S],
    k: &[S],
    dout: &[S],
    mut dx: Option<&mut [S]>,
    mut dk: Option<&mut [S]>,
) {
    let ConvGeom { c_in, h, w, c_out, kh, kw, stride, pad, ho, wo } = *g;
    for co in 0..c_out {
        let d_plane = &dout[co * ho * wo..(co + 1) * ho * wo];
        for ci in 0..c_in {
            let base = ci * h * w;
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_range(ho, h, stride, ky as isize - pad as isize);
                for kx in 0..kw {
                    let ki = ((co * c_in + ci) * kh + ky) * kw + kx;
                    let wgt = k[ki];
                    let off_x = kx as isize - pad as isize;
                    let (ox_lo, ox_hi) = valid_range(wo, w, stride, off_x);
                    if ox_lo == ox_hi {
                        continue;
                    }
                    let ix_lo = ((ox_lo * stride) as isize + off_x) as usize;
                    let mut acc = S::zero();
                    for oy in oy_lo..oy_hi {
                        let row = base + (oy * stride + ky - pad) * w;
                        let d_row = &d_plane[oy * wo + ox_lo..oy * wo + ox_hi];
                        if let Some(dx) = dx.as_deref_mut() {
                            let dx_row = &mut dx[row + ix_lo..row + w];
                            if stride == 1 {
                                for (xv, &d) in dx_row.iter_mut().zip(d_row) {
                                    *xv += wgt * d;
                                }
                            } else {
                                for (xv, &d) in dx_row.iter_mut().step_by(stride).zip(d_row) {
                                    *xv += wgt * d;
                                }
                            }
                        }
                        if dk.is_some() {
                            let x_row = &x[row + ix_lo..row + w];
                            if stride == 1 {
                                acc += x_row.iter().zip(d_row).fold(S::zero(), |a, (&xv, &d)| a + xv * d);
                            } else {
                                acc += x_row.iter().step_by(stride).zip(d_row).fold(S::zero(), |a, (&xv, &d)| a + xv * d);
                            }
                        }
                    }
                    if let Some(dk) = dk.as_deref_mut() {
                        dk[ki] += acc;
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct DeconvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    /// Leading rows/columns cropped from the full transposed-convolution output.
    pub crop: usize,
    pub ho: usize,
    pub wo: usize,
}

/// Transposed convolution. Kernel layout `[c_in, c_out, k, k]`; output pixel
/// `(iy*stride + ky - crop, ix*stride + kx - crop)` receives `x[iy, ix] * k[ky, kx]`.
pub(crate) fn deconv2d_forward<S: Scalar>(g: &DeconvGeom, x: &[S], k: &[S], out: &mut [S]) {
    let DeconvGeom { c_in, h, w, c_out, k: ks, stride, crop, ho, wo } = *g;
    for ci in 0..c_in {
        for co in 0..c_out {
            for ky in 0..ks {
                let (iy_lo, iy_hi) = valid_range(h, ho, stride, ky as isize - crop as isize);
                for kx in 0..ks {
                    let wgt = k[((ci * c_out + co) * ks + ky) * ks + kx];
                    let off_x = kx as isize - crop as isize;
                    let (ix_lo, ix_hi) = valid_range(w, wo, stride, off_x);
                    for iy in iy_lo..iy_hi {
                        let oy = iy * stride + ky - crop;
                        for ix in ix_lo..ix_hi {
                            let ox = ((ix * stride) as isize + off_x) as usize;
                            out[(co * ho + oy) * wo + ox] += wgt * x[(ci * h + iy) * w + ix];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn deconv2d_backward<S: Scalar>(
    g: &DeconvGeom,
    x: &[S],
    k: &[S],
    dout: &[S],
    mut dx: Option<&mut [S]>,
    mut dk: Option<&mut [S]>,
) {
    let DeconvGeom { c_in, h, w, c_out, k: ks, stride, crop, ho, wo } = *g;
    for ci in 0..c_in {
        for co in 0..c_out {
            for ky in 0..ks {
                let (iy_lo, iy_hi) = valid_range(h, ho, stride, ky as isize - crop as isize);
                for kx in 0..ks {
                    let ki = ((ci * c_out + co) * ks + ky) * ks + kx;
                    let wgt = k[ki];
                    let off_x = kx as isize - crop as isize;
                    let (ix_lo, ix_hi) = valid_range(w, wo, stride, off_x);
                    let mut acc = S::zero();
                    for iy in iy_lo..iy_hi {
                        let oy = iy * stride + ky - crop;
                        for ix in ix_lo..ix_hi {
                            let ox = ((ix * stride) as isize + off_x) as usize;
                            let d = dout[(co * ho + oy) * wo + ox];
                            let xi = (ci * h + iy) * w + ix;
                            if let Some(dx) = dx.as_deref_mut() {
                                dx[xi] += wgt * d;
                            }
                            acc += x[xi] * d;
                        }
                    }
                    if let Some(dk) = dk.as_deref_mut() {
                        dk[ki] += acc;
                    }
                }
            }
        }
    }
}

/// Index into `0..n` for a possibly out-of-range position under mirror
/// reflection without edge repetition (`[c b | a b c d | c b]`). Folds repeatedly,
/// so any padding width works; `n == 1` maps everything to 0.
#[inline]
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

#[inline]
pub(crate) fn edge_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}
