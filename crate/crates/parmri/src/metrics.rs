//! Image quality metrics on magnitude images: relative l2 norm error, peak
//! signal-to-noise ratio, and structural similarity.

use crate::error::{Error, Result};
use crate::numerics::ComplexImage;

/// `||rec - ref||_2 / ||ref||_2` on magnitude images.
pub fn rlne(rec: &ComplexImage, reference: &ComplexImage) -> Result<f64> {
    check_same(rec, reference)?;
    let (num, den) = rec.data().iter().zip(reference.data()).fold((0.0, 0.0), |(n, d), (a, b)| {
        let diff = a.norm() - b.norm();
        (n + diff * diff, d + b.norm_sqr())
    });
    if den == 0.0 {
        return Err(Error::InvalidInput("rlne: zero reference image".into()));
    }
    Ok((num / den).sqrt())
}

/// `10 log10(peak^2 / mse)` with peak the maximum reference magnitude.
/// Identical images yield `f64::INFINITY` (serialized as "inf").
pub fn psnr(rec: &ComplexImage, reference: &ComplexImage) -> Result<f64> {
    check_same(rec, reference)?;
    let n = reference.data().len() as f64;
    let peak = reference.data().iter().map(|v| v.norm()).fold(0.0f64, f64::max);
    if peak == 0.0 {
        return Err(Error::InvalidInput("psnr: zero reference image".into()));
    }
    let mse: f64 = rec
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| {
            let d = a.norm() - b.norm();
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable Gaussian filtering, evaluated on the valid region only.
fn filter_valid(img: &[f64], h: usize, w: usize, kernel: &[f64]) -> (Vec<f64>, usize, usize) {
    let kw = kernel.len();
    let oh = h - kw + 1;
    let ow = w - kw + 1;
    // rows
    let mut tmp = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                acc += kv * img[i * w + j + t];
            }
            tmp[i * ow + j] = acc;
        }
    }
    // columns
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                acc += kv * tmp[(i + t) * ow + j];
            }
            out[i * ow + j] = acc;
        }
    }
    (out, oh, ow)
}

/// Mean local SSIM over all fully interior 11x11 Gaussian windows, on real
/// images with the given dynamic range.
pub fn ssim_real(a: &[f64], b: &[f64], h: usize, w: usize, data_range: f64) -> Result<f64> {
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::ShapeMismatch("ssim input lengths".into()));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}"
        )));
    }
    if data_range <= 0.0 {
        return Err(Error::InvalidInput("ssim: non-positive dynamic range".into()));
    }
    let kernel = gaussian_kernel();
    let sq_a: Vec<f64> = a.iter().map(|v| v * v).collect();
    let sq_b: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let (mu_a, oh, ow) = filter_valid(a, h, w, &kernel);
    let (mu_b, _, _) = filter_valid(b, h, w, &kernel);
    let (m_aa, _, _) = filter_valid(&sq_a, h, w, &kernel);
    let (m_bb, _, _) = filter_valid(&sq_b, h, w, &kernel);
    let (m_ab, _, _) = filter_valid(&ab, h, w, &kernel);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let mut acc = 0.0;
    for p in 0..oh * ow {
        let va = m_aa[p] - mu_a[p] * mu_a[p];
        let vb = m_bb[p] - mu_b[p] * mu_b[p];
        let cov = m_ab[p] - mu_a[p] * mu_b[p];
        let num = (2.0 * mu_a[p] * mu_b[p] + c1) * (2.0 * cov + c2);
        let den = (mu_a[p] * mu_a[p] + mu_b[p] * mu_b[p] + c1) * (va + vb + c2);
        acc += num / den;
    }
    Ok(acc / (oh * ow) as f64)
}

/// SSIM between magnitude images, dynamic range set by the reference maximum.
pub fn ssim(rec: &ComplexImage, reference: &ComplexImage) -> Result<f64> {
    check_same(rec, reference)?;
    let a = rec.magnitude();
    let b = reference.magnitude();
    let peak = b.iter().cloned().fold(0.0f64, f64::max);
    if peak == 0.0 {
        return Err(Error::InvalidInput("ssim: zero reference image".into()));
    }
    ssim_real(&a, &b, rec.height(), rec.width(), peak)
}

fn check_same(a: &ComplexImage, b: &ComplexImage) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::ShapeMismatch("metric images differ in size".into()));
    }
    Ok(())
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
