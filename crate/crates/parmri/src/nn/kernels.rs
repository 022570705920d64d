//! Forward and backward compute kernels. Every parallel loop writes disjoint
//! output slices with a fixed-order inner accumulation, so results are
//! bit-identical for any thread count.

use super::scalar::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::numerics::fft2c_plane;
use num_complex::Complex;
use rayon::prelude::*;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;
/// Below this sum-of-squares magnitude a pixel normalizes to zero.
const SOS_FLOOR: f64 = 1e-20;

// ---------------------------------------------------------------- conv 3x3

fn conv_offsets(h: usize, w: usize, di: isize, dj: isize) -> (usize, usize, usize, usize) {
    let i_lo = (-di).max(0) as usize;
    let i_hi = (h as isize - di).min(h as isize) as usize;
    let j_lo = (-dj).max(0) as usize;
    let j_hi = (w as isize - dj).min(w as isize) as usize;
    (i_lo, i_hi, j_lo, j_hi)
}

/// Accumulate one shifted kernel tap over the valid region; the inner loops
/// are contiguous axpy sweeps that vectorize cleanly.
#[inline]
fn tap_axpy<R: Real>(
    plane: &mut [R],
    src_plane: &[R],
    wt: R,
    h: usize,
    wd: usize,
    di: isize,
    dj: isize,
) {
    if wt == R::zero() {
        return;
    }
    let (i_lo, i_hi, j_lo, j_hi) = conv_offsets(h, wd, di, dj);
    for i in i_lo..i_hi {
        let src_row = ((i as isize + di) as usize) * wd;
        let src = &src_plane
            [src_row + ((j_lo as isize + dj) as usize)..src_row + ((j_hi as isize + dj) as usize)];
        let dst = &mut plane[i * wd + j_lo..i * wd + j_hi];
        for (d, s) in dst.iter_mut().zip(src) {
            *d = *d + wt * *s;
        }
    }
}

/// Same-padding 3x3 cross-correlation.
pub fn conv3x3_forward<R: Real>(x: &Tensor<R>, w: &Tensor<R>, b: &Tensor<R>) -> Result<Tensor<R>> {
    let [n, ci, h, wd] = x.shape();
    let [co, wci, kh, kw] = w.shape();
    if wci != ci || kh != 3 || kw != 3 {
        return Err(Error::ShapeMismatch(format!(
            "conv weights {:?} vs input channels {ci}",
            w.shape()
        )));
    }
    if b.numel() != co {
        return Err(Error::ShapeMismatch("conv bias length".into()));
    }
    let mut out = Tensor::zeros([n, co, h, wd]);
    let hw = h * wd;
    out.data_mut().chunks_mut(hw).enumerate().for_each(|(nc, plane)| {
        let ni = nc / co;
        let coi = nc % co;
        plane.fill(b.data()[coi]);
        for cii in 0..ci {
            let xp = x.plane(ni, cii);
            let wk = &w.data()[(coi * ci + cii) * 9..(coi * ci + cii) * 9 + 9];
            for u in 0..3usize {
                for v in 0..3usize {
                    tap_axpy(plane, xp, wk[u * 3 + v], h, wd, u as isize - 1, v as isize - 1);
                }
            }
        }
    });
    Ok(out)
}

/// Blocked dot product with independent accumulators so the reduction
/// vectorizes.
#[inline]
fn dot_unrolled<R: Real>(a: &[R], b: &[R]) -> R {
    const LANES: usize = 8;
    let mut acc = [R::zero(); LANES];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let at = &a[c * LANES..(c + 1) * LANES];
        let bt = &b[c * LANES..(c + 1) * LANES];
        for k in 0..LANES {
            acc[k] = acc[k] + at[k] * bt[k];
        }
    }
    let mut s = R::zero();
    for k in 0..LANES {
        s = s + acc[k];
    }
    for j in chunks * LANES..a.len() {
        s = s + a[j] * b[j];
    }
    s
}

/// Gradients of the 3x3 convolution w.r.t. input, weights and bias.
pub fn conv3x3_backward<R: Real>(
    x: &Tensor<R>,
    w: &Tensor<R>,
    g: &Tensor<R>,
) -> (Tensor<R>, Tensor<R>, Tensor<R>) {
    let [n, ci, h, wd] = x.shape();
    let co = w.shape()[0];
    let hw = h * wd;

    // d/dx: correlation of g with the transposed kernel flipped in both axes
    let mut gx = Tensor::zeros([n, ci, h, wd]);
    gx.data_mut().chunks_mut(hw).enumerate().for_each(|(nc, plane)| {
        let ni = nc / ci;
        let cii = nc % ci;
        for coi in 0..co {
            let gp = g.plane(ni, coi);
            let wk = &w.data()[(coi * ci + cii) * 9..(coi * ci + cii) * 9 + 9];
            for u in 0..3usize {
                for v in 0..3usize {
                    tap_axpy(plane, gp, wk[u * 3 + v], h, wd, 1 - u as isize, 1 - v as isize);
                }
            }
        }
    });

    // d/dw: per (co, ci) tap, a dot product over shifted overlaps
    let mut gw = Tensor::zeros(w.shape());
    gw.data_mut().chunks_mut(9).enumerate().for_each(|(pair, wslice)| {
        let coi = pair / ci;
        let cii = pair % ci;
        for u in 0..3usize {
            let di = u as isize - 1;
            for v in 0..3usize {
                let dj = v as isize - 1;
                let i_lo = (-di).max(0) as usize;
                let i_hi = (h as isize).min(h as isize - di) as usize;
                let j_lo = (-dj).max(0) as usize;
                let j_hi = (wd as isize).min(wd as isize - dj) as usize;
                let mut acc = R::zero();
                for ni in 0..n {
                    let gp = g.plane(ni, coi);
                    let xp = x.plane(ni, cii);
                    for i in i_lo..i_hi {
                        let src_row = ((i as isize + di) as usize) * wd;
                        let xs = &xp[src_row + ((j_lo as isize + dj) as usize)
                            ..src_row + ((j_hi as isize + dj) as usize)];
                        let gs = &gp[i * wd + j_lo..i * wd + j_hi];
                        acc = acc + dot_unrolled(gs, xs);
                    }
                }
                wslice[u * 3 + v] = acc;
            }
        }
    });

    // d/db
    let mut gb = Tensor::zeros(b_shape(co));
    gb.data_mut().iter_mut().enumerate().for_each(|(coi, dst)| {
        let mut acc = R::zero();
        for ni in 0..n {
            for v in g.plane(ni, coi) {
                acc = acc + *v;
            }
        }
        *dst = acc;
    });
    (gx, gw, gb)
}

pub fn b_shape(co: usize) -> [usize; 4] {
    [1, co, 1, 1]
}

// ---------------------------------------------------------------- batchnorm

/// Per-channel batch statistics over (N, H, W): biased mean/variance and the
/// reciprocal standard deviation used for normalization.
pub fn bn_batch_stats<R: Real>(x: &Tensor<R>) -> Result<(Vec<R>, Vec<R>, Vec<R>)> {
    let [n, c, h, w] = x.shape();
    let count = n * h * w;
    if count < 2 {
        return Err(Error::InvalidInput(
            "batch norm in train mode needs at least 2 values per channel".into(),
        ));
    }
    let inv_count = R::of(1.0 / count as f64);
    let eps = R::of(BN_EPS);
    let mut mean = vec![R::zero(); c];
    let mut var = vec![R::zero(); c];
    let mut inv_std = vec![R::zero(); c];
    for ci in 0..c {
        let mut acc = R::zero();
        for ni in 0..n {
            for &xv in x.plane(ni, ci) {
                acc = acc + xv;
            }
        }
        let mu = acc * inv_count;
        let mut acc2 = R::zero();
        for ni in 0..n {
            for &xv in x.plane(ni, ci) {
                let d = xv - mu;
                acc2 = acc2 + d * d;
            }
        }
        let va = acc2 * inv_count;
        mean[ci] = mu;
        var[ci] = va;
        inv_std[ci] = R::one() / (va + eps).sqrt();
    }
    Ok((mean, var, inv_std))
}

pub fn bn_apply<R: Real>(
    x: &Tensor<R>,
    scale: &Tensor<R>,
    shift: &Tensor<R>,
    mean: &[R],
    inv_std: &[R],
) -> Tensor<R> {
    let [n, c, h, w] = x.shape();

    let mut out = Tensor::zeros([n, c, h, w]);
    for nc in 0..n * c {
        let ci = nc % c;
        let ni = nc / c;
        let ga = scale.data()[ci];
        let be = shift.data()[ci];
        let mu = mean[ci];
        let is = inv_std[ci];
        let (xp, plane) = (x.plane(ni, ci), out.plane_mut(ni, ci));
        for (d, &xv) in plane.iter_mut().zip(xp) {
            *d = ga * (xv - mu) * is + be;
        }
    }
    out
}

/// Train-mode backward with saved batch statistics.
pub fn bn_backward_train<R: Real>(
    x: &Tensor<R>,
    scale: &Tensor<R>,
    g: &Tensor<R>,
    mean: &[R],
    inv_std: &[R],
) -> (Tensor<R>, Tensor<R>, Tensor<R>) {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let count = R::of((n * hw) as f64);
    let mut gx = Tensor::zeros([n, c, h, w]);
    let mut gscale = Tensor::zeros(b_shape(c));
    let mut gshift = Tensor::zeros(b_shape(c));
    // per-channel reductions first (fixed order over n, pixels)
    let mut sums: Vec<(R, R)> = vec![(R::zero(), R::zero()); c];
    for (ci, slot) in sums.iter_mut().enumerate() {
        let mut sg = R::zero();
        let mut sgx = R::zero();
        for ni in 0..n {
            let gp = g.plane(ni, ci);
            let xp = x.plane(ni, ci);
            for (gv, xv) in gp.iter().zip(xp) {
                sg = sg + *gv;
                sgx = sgx + *gv * (*xv - mean[ci]) * inv_std[ci];
            }
        }
        *slot = (sg, sgx);
    }
    for ci in 0..c {
        gshift.data_mut()[ci] = sums[ci].0;
        gscale.data_mut()[ci] = sums[ci].1;
    }
    for nc in 0..n * c {
        let ci = nc % c;
        let ni = nc / c;
        let (sg, sgx) = sums[ci];
        let mg = sg / count;
        let mgx = sgx / count;
        let coef = scale.data()[ci] * inv_std[ci];
        let (gp, xp) = (g.plane(ni, ci), x.plane(ni, ci));
        let plane = gx.plane_mut(ni, ci);
        for ((d, gv), xv) in plane.iter_mut().zip(gp).zip(xp) {
            let xhat = (*xv - mean[ci]) * inv_std[ci];
            *d = coef * (*gv - mg - xhat * mgx);
        }
    }
    (gx, gscale, gshift)
}

/// Eval-mode backward (fixed statistics).
pub fn bn_backward_eval<R: Real>(
    x: &Tensor<R>,
    scale: &Tensor<R>,
    g: &Tensor<R>,
    mean: &[R],
    inv_std: &[R],
) -> (Tensor<R>, Tensor<R>, Tensor<R>) {
    let [n, c, h, w] = x.shape();

    let mut gx = Tensor::zeros([n, c, h, w]);
    let mut gscale = Tensor::zeros(b_shape(c));
    let mut gshift = Tensor::zeros(b_shape(c));
    for nc in 0..n * c {
        let ci = nc % c;
        let ni = nc / c;
        let coef = scale.data()[ci] * inv_std[ci];
        let gp = g.plane(ni, ci);
        let plane = gx.plane_mut(ni, ci);
        for (d, gv) in plane.iter_mut().zip(gp) {
            *d = coef * *gv;
        }
    }
    let mut sums: Vec<(R, R)> = vec![(R::zero(), R::zero()); c];
    for (ci, slot) in sums.iter_mut().enumerate() {
        let mut sg = R::zero();
        let mut sgx = R::zero();
        for ni in 0..n {
            let gp = g.plane(ni, ci);
            let xp = x.plane(ni, ci);
            for (gv, xv) in gp.iter().zip(xp) {
                sg = sg + *gv;
                sgx = sgx + *gv * (*xv - mean[ci]) * inv_std[ci];
            }
        }
        *slot = (sg, sgx);
    }
    for ci in 0..c {
        gshift.data_mut()[ci] = sums[ci].0;
        gscale.data_mut()[ci] = sums[ci].1;
    }
    (gx, gscale, gshift)
}

// ---------------------------------------------------------------- pointwise

pub fn relu_forward<R: Real>(x: &Tensor<R>) -> Tensor<R> {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < R::zero() {
            *v = R::zero();
        }
    }
    out
}

pub fn relu_backward<R: Real>(x: &Tensor<R>, g: &Tensor<R>) -> Tensor<R> {
    let mut gx = g.clone();
    for (gv, xv) in gx.data_mut().iter_mut().zip(x.data()) {
        if *xv <= R::zero() {
            *gv = R::zero();
        }
    }
    gx
}

/// Real soft-threshold `sign(x) * max(|x| - rho, 0)`.
pub fn softthresh_real_forward<R: Real>(x: &Tensor<R>, rho: R) -> Tensor<R> {
    let mut out = x.clone();
    for v in out.data_mut() {
        let mag = v.abs();
        *v = if mag <= rho { R::zero() } else { v.signum() * (mag - rho) };
    }
    out
}

pub fn softthresh_real_backward<R: Real>(x: &Tensor<R>, rho: R, g: &Tensor<R>) -> (Tensor<R>, R) {
    let mut gx = Tensor::zeros(x.shape());
    let mut grho = R::zero();
    for ((d, xv), gv) in gx.data_mut().iter_mut().zip(x.data()).zip(g.data()) {
        if xv.abs() > rho {
            *d = *gv;
            grho = grho - xv.signum() * *gv;
        }
    }
    (gx, grho)
}

/// Complex soft-threshold over channel pairs: `max(|z|-rho, 0) * z/|z|`.
pub fn softthresh_complex_forward<R: Real>(x: &Tensor<R>, rho: R) -> Result<Tensor<R>> {
    let [n, c, h, w] = x.shape();
    if c % 2 != 0 {
        return Err(Error::ShapeMismatch("complex soft-threshold needs channel pairs".into()));
    }
    let hw = h * w;
    let mut out = Tensor::zeros([n, c, h, w]);
    for ni in 0..n {
        for p in 0..c / 2 {
            let re = x.plane(ni, 2 * p).to_vec();
            let im = x.plane(ni, 2 * p + 1).to_vec();
            for q in 0..hw {
                let mag = (re[q] * re[q] + im[q] * im[q]).sqrt();
                let (or, oi) = if mag <= rho {
                    (R::zero(), R::zero())
                } else {
                    let k = (mag - rho) / mag;
                    (re[q] * k, im[q] * k)
                };
                out.plane_mut(ni, 2 * p)[q] = or;
                out.plane_mut(ni, 2 * p + 1)[q] = oi;
            }
        }
    }
    Ok(out)
}

pub fn softthresh_complex_backward<R: Real>(
    x: &Tensor<R>,
    rho: R,
    g: &Tensor<R>,
) -> (Tensor<R>, R) {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut gx = Tensor::zeros([n, c, h, w]);
    let mut grho = R::zero();
    for ni in 0..n {
        for p in 0..c / 2 {
            for q in 0..hw {
                let a = x.plane(ni, 2 * p)[q];
                let b = x.plane(ni, 2 * p + 1)[q];
                let ga = g.plane(ni, 2 * p)[q];
                let gb = g.plane(ni, 2 * p + 1)[q];
                let r2 = a * a + b * b;
                let r = r2.sqrt();
                if r <= rho {
                    continue;
                }
                let r3 = r2 * r;
                // d out_a / d a = 1 - rho/r + rho a^2 / r^3, cross = rho ab / r^3
                let daa = R::one() - rho / r + rho * a * a / r3;
                let dbb = R::one() - rho / r + rho * b * b / r3;
                let dab = rho * a * b / r3;
                gx.plane_mut(ni, 2 * p)[q] = ga * daa + gb * dab;
                gx.plane_mut(ni, 2 * p + 1)[q] = ga * dab + gb * dbb;
                grho = grho - (a / r) * ga - (b / r) * gb;
            }
        }
    }
    (gx, grho)
}

// ---------------------------------------------------------------- pooling

pub fn maxpool2_forward<R: Real>(x: &Tensor<R>) -> Result<(Tensor<R>, Vec<u32>)> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::ShapeMismatch(format!("maxpool needs even spatial dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = vec![0u32; n * c * oh * ow];
    let ohw = oh * ow;
    out.data_mut()
        .chunks_mut(ohw)
        .zip(argmax.chunks_mut(ohw))
        .enumerate()
        .for_each(|(nc, (plane, amax))| {
            let xp = x.plane(nc / c, nc % c);
            for i in 0..oh {
                for j in 0..ow {
                    let base = (2 * i) * w + 2 * j;
                    let cands = [base, base + 1, base + w, base + w + 1];
                    let mut best = cands[0];
                    let mut best_v = xp[cands[0]];
                    for &idx in &cands[1..] {
                        if xp[idx] > best_v {
                            best_v = xp[idx];
                            best = idx;
                        }
                    }
                    plane[i * ow + j] = best_v;
                    amax[i * ow + j] = best as u32;
                }
            }
        });
    Ok((out, argmax))
}

pub fn maxpool2_backward<R: Real>(
    x_shape: [usize; 4],
    argmax: &[u32],
    g: &Tensor<R>,
) -> Tensor<R> {
    let [n, c, h, w] = x_shape;
    let (oh, ow) = (h / 2, w / 2);
    let ohw = oh * ow;
    let mut gx = Tensor::zeros([n, c, h, w]);
    gx.data_mut().chunks_mut(h * w).enumerate().for_each(|(nc, plane)| {
        let gp = g.plane(nc / c, nc % c);
        let amax = &argmax[nc * ohw..(nc + 1) * ohw];
        for q in 0..ohw {
            plane[amax[q] as usize] = plane[amax[q] as usize] + gp[q];
        }
    });
    gx
}

pub fn upsample2_forward<R: Real>(x: &Tensor<R>) -> Tensor<R> {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    out.data_mut().chunks_mut(oh * ow).enumerate().for_each(|(nc, plane)| {
        let xp = x.plane(nc / c, nc % c);
        for i in 0..oh {
            for j in 0..ow {
                plane[i * ow + j] = xp[(i / 2) * w + j / 2];
            }
        }
    });
    out
}

pub fn upsample2_backward<R: Real>(x_shape: [usize; 4], g: &Tensor<R>) -> Tensor<R> {
    let [n, c, h, w] = x_shape;
    let ow = 2 * w;
    let mut gx = Tensor::zeros([n, c, h, w]);
    gx.data_mut().chunks_mut(h * w).enumerate().for_each(|(nc, plane)| {
        let gp = g.plane(nc / c, nc % c);
        for i in 0..h {
            for j in 0..w {
                let mut acc = R::zero();
                for di in 0..2 {
                    for dj in 0..2 {
                        acc = acc + gp[(2 * i + di) * ow + 2 * j + dj];
                    }
                }
                plane[i * w + j] = acc;
            }
        }
    });
    gx
}

// ------------------------------------------------------------ complex pairs

/// Per complex plane centered FFT; channel pairs `(2p, 2p+1)` hold (re, im).
pub fn fft2c_tensor<R: Real>(x: &Tensor<R>, inverse: bool) -> Result<Tensor<R>> {
    let [n, c, h, w] = x.shape();
    if c % 2 != 0 {
        return Err(Error::ShapeMismatch("fft tensor needs channel pairs".into()));
    }
    let mut out = Tensor::zeros([n, c, h, w]);
    let hw = h * w;
    let pairs = c / 2;
    out.data_mut().par_chunks_mut(2 * hw).enumerate().for_each(|(np, two)| {
        let ni = np / pairs;
        let p = np % pairs;
        let re = x.plane(ni, 2 * p);
        let im = x.plane(ni, 2 * p + 1);
        let mut buf: Vec<Complex<R>> =
            re.iter().zip(im).map(|(&a, &b)| Complex::new(a, b)).collect();
        fft2c_plane(&mut buf, h, w, inverse);
        let (ore, oim) = two.split_at_mut(hw);
        for (q, v) in buf.iter().enumerate() {
            ore[q] = v.re;
            oim[q] = v.im;
        }
    });
    Ok(out)
}

/// Zero non-acquired positions of every channel pair, per batch element.
pub fn apply_mask_tensor<R: Real>(x: &Tensor<R>, omega: &[bool]) -> Tensor<R> {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    debug_assert_eq!(omega.len(), n * hw);
    let mut out = x.clone();
    out.data_mut().chunks_mut(hw).enumerate().for_each(|(nc, plane)| {
        let ni = nc / c;
        let om = &omega[ni * hw..(ni + 1) * hw];
        for (v, &keep) in plane.iter_mut().zip(om) {
            if !keep {
                *v = R::zero();
            }
        }
    });
    out
}

/// `out_j = m_j * x` (complex product), maps 2J channels, image 2 channels.
pub fn coil_expand_forward<R: Real>(maps: &Tensor<R>, img: &Tensor<R>) -> Result<Tensor<R>> {
    let [n, cj, h, w] = maps.shape();
    if img.shape() != [n, 2, h, w] || cj % 2 != 0 {
        return Err(Error::ShapeMismatch("coil expand shapes".into()));
    }
    let hw = h * w;
    let pairs = cj / 2;
    let mut out = Tensor::zeros([n, cj, h, w]);
    out.data_mut().chunks_mut(2 * hw).enumerate().for_each(|(np, two)| {
        let ni = np / pairs;
        let p = np % pairs;
        let mr = maps.plane(ni, 2 * p);
        let mi = maps.plane(ni, 2 * p + 1);
        let xr = img.plane(ni, 0);
        let xi = img.plane(ni, 1);
        let (or_, oi_) = two.split_at_mut(hw);
        for q in 0..hw {
            or_[q] = mr[q] * xr[q] - mi[q] * xi[q];
            oi_[q] = mr[q] * xi[q] + mi[q] * xr[q];
        }
    });
    Ok(out)
}

/// grads: `g_m = g * conj(x)`, `g_x = sum_j g_j * conj(m_j)`.
pub fn coil_expand_backward<R: Real>(
    maps: &Tensor<R>,
    img: &Tensor<R>,
    g: &Tensor<R>,
) -> (Tensor<R>, Tensor<R>) {
    let [n, cj, h, w] = maps.shape();
    let hw = h * w;
    let pairs = cj / 2;
    let mut gm = Tensor::zeros([n, cj, h, w]);
    gm.data_mut().chunks_mut(2 * hw).enumerate().for_each(|(np, two)| {
        let ni = np / pairs;
        let p = np % pairs;
        let gr = g.plane(ni, 2 * p);
        let gi = g.plane(ni, 2 * p + 1);
        let xr = img.plane(ni, 0);
        let xi = img.plane(ni, 1);
        let (omr, omi) = two.split_at_mut(hw);
        for q in 0..hw {
            // g * conj(x)
            omr[q] = gr[q] * xr[q] + gi[q] * xi[q];
            omi[q] = gi[q] * xr[q] - gr[q] * xi[q];
        }
    });
    let mut gx = Tensor::zeros([n, 2, h, w]);
    gx.data_mut().chunks_mut(2 * hw).enumerate().for_each(|(ni, two)| {
        let (oxr, oxi) = two.split_at_mut(hw);
        for p in 0..pairs {
            let gr = g.plane(ni, 2 * p);
            let gi = g.plane(ni, 2 * p + 1);
            let mr = maps.plane(ni, 2 * p);
            let mi = maps.plane(ni, 2 * p + 1);
            for q in 0..hw {
                // g * conj(m)
                oxr[q] = oxr[q] + gr[q] * mr[q] + gi[q] * mi[q];
                oxi[q] = oxi[q] + gi[q] * mr[q] - gr[q] * mi[q];
            }
        }
    });
    (gm, gx)
}

/// `out = sum_j conj(m_j) * z_j`.
pub fn coil_combine_forward<R: Real>(maps: &Tensor<R>, stack: &Tensor<R>) -> Result<Tensor<R>> {
    let [n, cj, h, w] = maps.shape();
    if stack.shape() != [n, cj, h, w] || cj % 2 != 0 {
        return Err(Error::ShapeMismatch("coil combine shapes".into()));
    }
    let hw = h * w;
    let pairs = cj / 2;
    let mut out = Tensor::zeros([n, 2, h, w]);
    out.data_mut().chunks_mut(2 * hw).enumerate().for_each(|(ni, two)| {
        let (or_, oi_) = two.split_at_mut(hw);
        for p in 0..pairs {
            let mr = maps.plane(ni, 2 * p);
            let mi = maps.plane(ni, 2 * p + 1);
            let zr = stack.plane(ni, 2 * p);
            let zi = stack.plane(ni, 2 * p + 1);
            for q in 0..hw {
                // conj(m) * z
                or_[q] = or_[q] + mr[q] * zr[q] + mi[q] * zi[q];
                oi_[q] = oi_[q] + mr[q] * zi[q] - mi[q] * zr[q];
            }
        }
    });
    Ok(out)
}

/// grads: `g_m = conj(g) * z`, `g_z = g * m`.
pub fn coil_combine_backward<R: Real>(
    maps: &Tensor<R>,
    stack: &Tensor<R>,
    g: &Tensor<R>,
) -> (Tensor<R>, Tensor<R>) {
    let [n, cj, h, w] = maps.shape();
    let hw = h * w;
    let pairs = cj / 2;
    let mut gm = Tensor::zeros([n, cj, h, w]);
    let mut gz = Tensor::zeros([n, cj, h, w]);
    gm.data_mut()
        .chunks_mut(2 * hw)
        .zip(gz.data_mut().chunks_mut(2 * hw))
        .enumerate()
        .for_each(|(np, (gm_two, gz_two))| {
            let ni = np / pairs;
            let p = np % pairs;
            let gr = g.plane(ni, 0);
            let gi = g.plane(ni, 1);
            let mr = maps.plane(ni, 2 * p);
            let mi = maps.plane(ni, 2 * p + 1);
            let zr = stack.plane(ni, 2 * p);
            let zi = stack.plane(ni, 2 * p + 1);
            let (gmr, gmi) = gm_two.split_at_mut(hw);
            let (gzr, gzi) = gz_two.split_at_mut(hw);
            for q in 0..hw {
                // conj(g) * z
                gmr[q] = gr[q] * zr[q] + gi[q] * zi[q];
                gmi[q] = gr[q] * zi[q] - gi[q] * zr[q];
                // g * m
                gzr[q] = gr[q] * mr[q] - gi[q] * mi[q];
                gzi[q] = gr[q] * mi[q] + gi[q] * mr[q];
            }
        });
    (gm, gz)
}

/// Pixelwise normalization of the 2J-channel vector to unit euclidean norm
/// (unit SoS over coils). Pixels below the floor map to zero.
pub fn sos_normalize_forward<R: Real>(x: &Tensor<R>) -> Tensor<R> {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let floor = R::of(SOS_FLOOR);
    let mut out = Tensor::zeros([n, c, h, w]);
    // parallel over batch; each task owns all channels of one element
    let chunk = c * hw;
    out.data_mut().chunks_mut(chunk).enumerate().for_each(|(ni, dst)| {
        for q in 0..hw {
            let mut acc = R::zero();
            for ci in 0..c {
                let v = x.plane(ni, ci)[q];
                acc = acc + v * v;
            }
            let r = acc.sqrt();
            if r > floor {
                let inv = R::one() / r;
                for ci in 0..c {
                    dst[ci * hw + q] = x.plane(ni, ci)[q] * inv;
                }
            }
        }
    });
    out
}

pub fn sos_normalize_backward<R: Real>(x: &Tensor<R>, g: &Tensor<R>) -> Tensor<R> {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let floor = R::of(SOS_FLOOR);
    let mut gx = Tensor::zeros([n, c, h, w]);
    let chunk = c * hw;
    gx.data_mut().chunks_mut(chunk).enumerate().for_each(|(ni, dst)| {
        for q in 0..hw {
            let mut acc = R::zero();
            let mut dot = R::zero();
            for ci in 0..c {
                let v = x.plane(ni, ci)[q];
                acc = acc + v * v;
                dot = dot + g.plane(ni, ci)[q] * v;
            }
            let r = acc.sqrt();
            if r > floor {
                let inv = R::one() / r;
                let inv3 = inv * inv * inv;
                for ci in 0..c {
                    let v = x.plane(ni, ci)[q];
                    let gv = g.plane(ni, ci)[q];
                    dst[ci * hw + q] = gv * inv - v * dot * inv3;
                }
            }
        }
    });
    gx
}

/// Data-consistency blend in k-space: on acquired positions
/// `(k + lambda*y) / (1 + lambda)`, elsewhere `k` untouched.
pub fn dc_blend_forward<R: Real>(
    k: &Tensor<R>,
    y: &Tensor<R>,
    omega: &[bool],
    lambda: R,
) -> Tensor<R> {
    let [_, c, h, w] = k.shape();
    let hw = h * w;
    let blend = R::one() / (R::one() + lambda);
    let mut out = k.clone();
    out.data_mut().chunks_mut(hw).enumerate().for_each(|(nc, plane)| {
        let ni = nc / c;
        let om = &omega[ni * hw..(ni + 1) * hw];
        let yp = y.plane(ni, nc % c);
        for (q, v) in plane.iter_mut().enumerate() {
            if om[q] {
                *v = (*v + lambda * yp[q]) * blend;
            }
        }
    });
    out
}

/// grads: `g_k = g/(1+lambda)` on the mask (else `g`), and
/// `g_lambda = sum_mask g * (y - k) / (1+lambda)^2`.
pub fn dc_blend_backward<R: Real>(
    k: &Tensor<R>,
    y: &Tensor<R>,
    omega: &[bool],
    lambda: R,
    g: &Tensor<R>,
) -> (Tensor<R>, R) {
    let [n, c, h, w] = k.shape();
    let hw = h * w;
    let inv = R::one() / (R::one() + lambda);
    let inv2 = inv * inv;
    let mut gk = g.clone();
    gk.data_mut().chunks_mut(hw).enumerate().for_each(|(nc, plane)| {
        let ni = nc / c;
        let om = &omega[ni * hw..(ni + 1) * hw];
        for (q, v) in plane.iter_mut().enumerate() {
            if om[q] {
                *v = *v * inv;
            }
        }
    });
    let mut glambda = R::zero();
    for ni in 0..n {
        let om = &omega[ni * hw..(ni + 1) * hw];
        for ci in 0..c {
            let gp = g.plane(ni, ci);
            let kp = k.plane(ni, ci);
            let yp = y.plane(ni, ci);
            for q in 0..hw {
                if om[q] {
                    glambda = glambda + gp[q] * (yp[q] - kp[q]) * inv2;
                }
            }
        }
    }
    (gk, glambda)
}
