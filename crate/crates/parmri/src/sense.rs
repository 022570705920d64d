//! Coil sensitivity maps and the sensitivity-encoded acquisition operators:
//! forward model, its adjoint, zero-filled reconstruction and the k-space
//! data-consistency projection.

use crate::error::{Error, Result};
use crate::mask::SamplingMask;
use crate::numerics::{fft2c, ifft2c, sos, ComplexImage, CoilStack, C64};

/// Unit sum-of-squares tolerance enforced on the foreground.
pub const UNIT_SOS_TOL: f64 = 1e-8;

/// Per-coil complex sensitivity maps with an explicit foreground support.
/// On the foreground the maps satisfy `sum_j |S_j|^2 = 1` (within
/// [`UNIT_SOS_TOL`]); off the foreground every coil is exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SenseMaps {
    coils: usize,
    height: usize,
    width: usize,
    data: Vec<C64>,
    foreground: Vec<bool>,
}

impl SenseMaps {
    pub fn new(
        coils: usize,
        height: usize,
        width: usize,
        data: Vec<C64>,
        foreground: Vec<bool>,
    ) -> Result<Self> {
        if data.len() != coils * height * width || foreground.len() != height * width {
            return Err(Error::ShapeMismatch("sense maps buffers".into()));
        }
        let maps = Self { coils, height, width, data, foreground };
        maps.validate()?;
        Ok(maps)
    }

    fn validate(&self) -> Result<()> {
        let n = self.height * self.width;
        for p in 0..n {
            let mut acc = 0.0;
            for j in 0..self.coils {
                acc += self.data[j * n + p].norm_sqr();
            }
            if self.foreground[p] {
                if (acc - 1.0).abs() > UNIT_SOS_TOL {
                    return Err(Error::InvalidInput(format!(
                        "foreground pixel {p} has sum-of-squares {acc}, expected 1"
                    )));
                }
            } else if acc != 0.0 {
                return Err(Error::InvalidInput(format!(
                    "background pixel {p} has non-zero sensitivity"
                )));
            }
        }
        Ok(())
    }

    /// Normalize an arbitrary coil profile stack to unit SoS. Pixels whose SoS
    /// falls below `eps_rel` times the maximum become background (all zeros).
    pub fn from_profiles(profiles: &CoilStack, eps_rel: f64) -> Result<Self> {
        let n = profiles.height() * profiles.width();
        let s = sos(profiles)?;
        let max = s.data().iter().map(|v| v.re).fold(0.0f64, f64::max);
        if max <= 0.0 {
            return Err(Error::Calibration("empty foreground: all-zero coil images".into()));
        }
        let thresh = eps_rel * max;
        let mut data = vec![C64::new(0.0, 0.0); profiles.coils() * n];
        let mut foreground = vec![false; n];
        for p in 0..n {
            let denom = s.data()[p].re;
            if denom >= thresh && denom > 0.0 {
                foreground[p] = true;
                for j in 0..profiles.coils() {
                    data[j * n + p] = profiles.data()[j * n + p] / denom;
                }
            }
        }
        Self::new(profiles.coils(), profiles.height(), profiles.width(), data, foreground)
    }

    pub fn coils(&self) -> usize {
        self.coils
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[C64] {
        &self.data
    }
    pub fn foreground(&self) -> &[bool] {
        &self.foreground
    }

    pub fn plane(&self, j: usize) -> &[C64] {
        let n = self.height * self.width;
        &self.data[j * n..(j + 1) * n]
    }

    pub fn coil_image(&self, j: usize) -> ComplexImage {
        ComplexImage::new(self.height, self.width, self.plane(j).to_vec()).expect("plane size")
    }

    /// Expand a combined image into per-coil images `S_j * x`.
    pub fn expand(&self, x: &ComplexImage) -> Result<CoilStack> {
        if x.height() != self.height || x.width() != self.width {
            return Err(Error::ShapeMismatch("maps vs image".into()));
        }
        let n = self.height * self.width;
        let mut data = Vec::with_capacity(self.coils * n);
        for j in 0..self.coils {
            let plane = self.plane(j);
            data.extend(plane.iter().zip(x.data()).map(|(s, v)| s * v));
        }
        CoilStack::new(self.coils, self.height, self.width, data)
    }

    /// Combine per-coil images into `sum_j conj(S_j) * z_j`.
    pub fn combine(&self, z: &CoilStack) -> Result<ComplexImage> {
        if z.coils() != self.coils || z.height() != self.height || z.width() != self.width {
            return Err(Error::ShapeMismatch("maps vs coil stack".into()));
        }
        let n = self.height * self.width;
        let mut out = vec![C64::new(0.0, 0.0); n];
        for j in 0..self.coils {
            let plane = self.plane(j);
            for ((o, s), v) in out.iter_mut().zip(plane).zip(z.plane(j)) {
                *o += s.conj() * v;
            }
        }
        ComplexImage::new(self.height, self.width, out)
    }
}

fn check_dims(maps: &SenseMaps, mask: &SamplingMask) -> Result<()> {
    if maps.height() != mask.height() || maps.width() != mask.width() {
        return Err(Error::ShapeMismatch("maps vs mask".into()));
    }
    Ok(())
}

/// Forward acquisition: `y_j = mask .* fft2c(S_j .* x)`, non-acquired
/// positions exactly zero.
pub fn sense_forward(maps: &SenseMaps, x: &ComplexImage, mask: &SamplingMask) -> Result<CoilStack> {
    check_dims(maps, mask)?;
    let expanded = maps.expand(x)?;
    let mut out = CoilStack::zeros(maps.coils(), maps.height(), maps.width());
    for j in 0..maps.coils() {
        let k = fft2c(&expanded.coil_image(j))?;
        let plane = out.plane_mut(j);
        for (p, (dst, src)) in plane.iter_mut().zip(k.data()).enumerate() {
            if mask.omega()[p] {
                *dst = *src;
            }
        }
    }
    Ok(out)
}

/// Exact adjoint of [`sense_forward`]:
/// `x = sum_j conj(S_j) .* ifft2c(mask .* y_j)`.
pub fn sense_adjoint(maps: &SenseMaps, y: &CoilStack, mask: &SamplingMask) -> Result<ComplexImage> {
    check_dims(maps, mask)?;
    if y.coils() != maps.coils() || y.height() != maps.height() || y.width() != maps.width() {
        return Err(Error::ShapeMismatch("kspace vs maps".into()));
    }
    let mut imgs = Vec::with_capacity(y.coils());
    for j in 0..y.coils() {
        let mut masked = y.coil_image(j);
        for (p, v) in masked.data_mut().iter_mut().enumerate() {
            if !mask.omega()[p] {
                *v = C64::new(0.0, 0.0);
            }
        }
        imgs.push(ifft2c(&masked)?);
    }
    maps.combine(&CoilStack::from_planes(&imgs)?)
}

/// Per-coil inverse transform of the zero-filled k-space. The conventional
/// baseline image is `sos(zero_filled(y, mask))`.
pub fn zero_filled(y: &CoilStack, mask: &SamplingMask) -> Result<CoilStack> {
    if y.height() != mask.height() || y.width() != mask.width() {
        return Err(Error::ShapeMismatch("kspace vs mask".into()));
    }
    let mut planes = Vec::with_capacity(y.coils());
    for j in 0..y.coils() {
        let mut masked = y.coil_image(j);
        for (p, v) in masked.data_mut().iter_mut().enumerate() {
            if !mask.omega()[p] {
                *v = C64::new(0.0, 0.0);
            }
        }
        planes.push(ifft2c(&masked)?);
    }
    CoilStack::from_planes(&planes)
}

/// The corrected per-coil k-space of the data-consistency step: forms
/// `K_j = fft2c(S_j .* x_tilde)` and blends acquired entries toward the
/// measured data as `(K_j + lambda*y_j) / (1 + lambda)`, leaving non-acquired
/// entries bit-identical to `K_j`.
pub fn dc_corrected_kspace(
    x_tilde: &ComplexImage,
    maps: &SenseMaps,
    y: &CoilStack,
    mask: &SamplingMask,
    lambda: f64,
) -> Result<CoilStack> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::Parameter(format!("lambda {lambda} must be finite and >= 0")));
    }
    check_dims(maps, mask)?;
    if y.coils() != maps.coils() || y.height() != maps.height() || y.width() != maps.width() {
        return Err(Error::ShapeMismatch("kspace vs maps".into()));
    }
    let expanded = maps.expand(x_tilde)?;
    let blend = 1.0 / (1.0 + lambda);
    let mut out = CoilStack::zeros(maps.coils(), maps.height(), maps.width());
    for j in 0..maps.coils() {
        let k = fft2c(&expanded.coil_image(j))?;
        let yj = y.plane(j);
        let plane = out.plane_mut(j);
        for (p, (dst, src)) in plane.iter_mut().zip(k.data()).enumerate() {
            *dst = if mask.omega()[p] { (*src + yj[p] * lambda) * blend } else { *src };
        }
    }
    Ok(out)
}

/// K-space data-consistency projection: the corrected k-space of
/// [`dc_corrected_kspace`] mapped back through the adjoint combine.
pub fn data_consistency(
    x_tilde: &ComplexImage,
    maps: &SenseMaps,
    y: &CoilStack,
    mask: &SamplingMask,
    lambda: f64,
) -> Result<ComplexImage> {
    let kprime = dc_corrected_kspace(x_tilde, maps, y, mask, lambda)?;
    let mut corrected = Vec::with_capacity(maps.coils());
    for j in 0..maps.coils() {
        corrected.push(ifft2c(&kprime.coil_image(j))?);
    }
    maps.combine(&CoilStack::from_planes(&corrected)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::make_mask_1d;
    use crate::numerics::{inner, rel_err};
    use crate::testutil::{random_image, random_stack, smooth_full_maps};

    #[test]
    fn forward_zero_is_zero_and_respects_mask() {
        let maps = smooth_full_maps(3, 16, 16, 1);
        let mask = make_mask_1d(16, 16, 2.0, 4, 9).unwrap();
        let y = sense_forward(&maps, &ComplexImage::zeros(16, 16), &mask).unwrap();
        assert_eq!(y.norm2(), 0.0);

        let y2 = sense_forward(&maps, &random_image(16, 16, 2), &mask).unwrap();
        for j in 0..3 {
            for (p, v) in y2.plane(j).iter().enumerate() {
                if !mask.omega()[p] {
                    assert_eq!(v.norm(), 0.0);
                }
            }
        }
    }

    #[test]
    fn single_unit_coil_full_mask_is_plain_fft() {
        let h = 12;
        let w = 10;
        let maps = SenseMaps::new(
            1,
            h,
            w,
            vec![C64::new(1.0, 0.0); h * w],
            vec![true; h * w],
        )
        .unwrap();
        let mask = make_mask_1d(w, h, 1.0, 0, 0).unwrap();
        let x = random_image(h, w, 3);
        let y = sense_forward(&maps, &x, &mask).unwrap();
        let k = fft2c(&x).unwrap();
        assert!(rel_err(y.plane(0), k.data()) < 1e-13);
    }

    #[test]
    fn adjoint_inner_product_identity() {
        for trial in 0..50 {
            let (h, w, coils) = (12, 14, 3);
            let maps = smooth_full_maps(coils, h, w, 100 + trial);
            let mask = make_mask_1d(w, h, 2.0, 2, trial).unwrap();
            let x = random_image(h, w, 200 + trial);
            let y = random_stack(coils, h, w, 300 + trial);
            let ex = sense_forward(&maps, &x, &mask).unwrap();
            let ehy = sense_adjoint(&maps, &y, &mask).unwrap();
            let lhs = inner(ex.data(), y.data());
            let rhs = inner(x.data(), ehy.data());
            let scale = ex.norm2() * y.norm2();
            assert!((lhs - rhs).norm() / scale.max(1e-30) < 1e-10, "trial {trial}");
        }
    }

    #[test]
    fn normal_operator_is_identity_on_full_mask() {
        let (h, w) = (16, 16);
        let maps = smooth_full_maps(4, h, w, 7);
        let mask = make_mask_1d(w, h, 1.0, 0, 0).unwrap();
        let x = random_image(h, w, 8);
        let y = sense_forward(&maps, &x, &mask).unwrap();
        let back = sense_adjoint(&maps, &y, &mask).unwrap();
        assert!(rel_err(back.data(), x.data()) < 1e-10);
    }

    #[test]
    fn zero_filled_recovers_on_full_mask() {
        let (h, w) = (8, 8);
        let imgs: Vec<ComplexImage> = (0..2).map(|s| random_image(h, w, 40 + s)).collect();
        let ksp = CoilStack::from_planes(
            &imgs.iter().map(|im| fft2c(im).unwrap()).collect::<Vec<_>>(),
        )
        .unwrap();
        let mask = make_mask_1d(w, h, 1.0, 0, 0).unwrap();
        let rec = zero_filled(&ksp, &mask).unwrap();
        for j in 0..2 {
            assert!(rel_err(rec.plane(j), imgs[j].data()) < 1e-12);
        }
        let zero = zero_filled(&CoilStack::zeros(2, h, w), &mask).unwrap();
        assert_eq!(zero.norm2(), 0.0);
    }

    #[test]
    fn dc_lambda_zero_is_identity() {
        let (h, w) = (16, 16);
        let maps = smooth_full_maps(3, h, w, 11);
        let mask = make_mask_1d(w, h, 3.0, 2, 5).unwrap();
        let x = random_image(h, w, 12);
        let y = random_stack(3, h, w, 13);
        let out = data_consistency(&x, &maps, &y, &mask, 0.0).unwrap();
        assert!(rel_err(out.data(), x.data()) < 1e-10);
    }

    #[test]
    fn dc_large_lambda_pins_sampled_kspace() {
        let (h, w) = (16, 16);
        let maps = smooth_full_maps(3, h, w, 14);
        let mask = make_mask_1d(w, h, 2.0, 2, 6).unwrap();
        let truth = random_image(h, w, 15);
        let y = sense_forward(&maps, &truth, &mask).unwrap();
        let x_tilde = random_image(h, w, 16);
        let kprime = dc_corrected_kspace(&x_tilde, &maps, &y, &mask, 1e6).unwrap();
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for j in 0..3 {
            for (p, v) in kprime.plane(j).iter().enumerate() {
                if mask.omega()[p] {
                    num += (v - y.plane(j)[p]).norm_sqr();
                    den += y.plane(j)[p].norm_sqr();
                }
            }
        }
        assert!(num.sqrt() / den.sqrt() < 2e-6, "rel {}", num.sqrt() / den.sqrt());
    }

    #[test]
    fn dc_off_mask_entries_bit_identical() {
        let (h, w) = (16, 16);
        let maps = smooth_full_maps(2, h, w, 17);
        let mask = make_mask_1d(w, h, 2.0, 2, 7).unwrap();
        let x_tilde = random_image(h, w, 18);
        let y = random_stack(2, h, w, 19);
        let kprime = dc_corrected_kspace(&x_tilde, &maps, &y, &mask, 1e3).unwrap();
        let expanded = maps.expand(&x_tilde).unwrap();
        for j in 0..2 {
            let k = fft2c(&expanded.coil_image(j)).unwrap();
            for p in 0..h * w {
                if !mask.omega()[p] {
                    assert_eq!(kprime.plane(j)[p], k.data()[p]);
                }
            }
        }
    }

    #[test]
    fn dc_negative_lambda_rejected() {
        let maps = smooth_full_maps(2, 8, 8, 20);
        let mask = make_mask_1d(8, 8, 2.0, 2, 8).unwrap();
        let x = ComplexImage::zeros(8, 8);
        let y = CoilStack::zeros(2, 8, 8);
        assert!(matches!(
            data_consistency(&x, &maps, &y, &mask, -1.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn dc_consistent_solution_is_fixed_point() {
        let (h, w) = (16, 16);
        let maps = smooth_full_maps(3, h, w, 21);
        let mask = make_mask_1d(w, h, 2.0, 4, 9).unwrap();
        let truth = random_image(h, w, 22);
        let y = sense_forward(&maps, &truth, &mask).unwrap();
        // with K = y on the mask, any lambda blend leaves k-space unchanged
        let out = data_consistency(&truth, &maps, &y, &mask, 1e6).unwrap();
        assert!(rel_err(out.data(), truth.data()) < 1e-9);
    }

    #[test]
    fn dc_repeated_application_contracts() {
        // For 0 < lambda < inf the projection is not literally idempotent:
        // the coil combine re-mixes corrected k-space across coils, so a
        // second application moves the image again. What does hold is that
        // the per-step movement never grows, and consistent data is an exact
        // fixed point (separate test above).
        let (h, w) = (16, 16);
        let maps = smooth_full_maps(3, h, w, 23);
        let mask = make_mask_1d(w, h, 2.0, 4, 10).unwrap();
        let truth = random_image(h, w, 24);
        let y = sense_forward(&maps, &truth, &mask).unwrap();
        let mut x = random_image(h, w, 25);
        let mut deltas = Vec::new();
        for _ in 0..50 {
            let next = data_consistency(&x, &maps, &y, &mask, 1e6).unwrap();
            deltas.push(rel_err(next.data(), x.data()));
            x = next;
        }
        for pair in deltas.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-9), "movement grew: {:?}", pair);
        }
        assert!(deltas[deltas.len() - 1] < 0.5 * deltas[0]);
    }
}
