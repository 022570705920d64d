//! Sensitivity-map producers: division-by-SoS ground truth, ACS
//! low-resolution estimation, and bivariate polynomial map fitting.

use crate::error::{Error, Result};
use crate::mask::{center_range, AcsRegion, SamplingMask};
use crate::numerics::{fft2c, ifft2c, ComplexImage, CoilStack, C64};
use crate::sense::SenseMaps;

/// Default relative SoS threshold below which a pixel counts as background.
pub const DEFAULT_EPS_REL: f64 = 1e-6;

/// Ground-truth maps: each fully sampled coil image divided by the SoS image.
/// Pixels with SoS below `eps_rel * max(SoS)` become background.
pub fn gt_maps(full_coil_images: &CoilStack, eps_rel: f64) -> Result<SenseMaps> {
    SenseMaps::from_profiles(full_coil_images, eps_rel)
}

/// Smoothing window applied over the ACS extent before the low-resolution
/// inverse transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Taper {
    None,
    /// Raised cosine spanning the full ACS extent; suppresses ringing from
    /// the hard k-space crop.
    RaisedCosine,
}

fn taper_weight(taper: Taper, offset: usize, len: usize) -> f64 {
    match taper {
        Taper::None => 1.0,
        Taper::RaisedCosine => {
            0.5 * (1.0 - (std::f64::consts::TAU * (offset as f64 + 0.5) / len as f64).cos())
        }
    }
}

/// Low-resolution sensitivity estimate from the autocalibration region:
/// zero all k-space outside the ACS, taper, inverse-transform per coil, and
/// divide by the SoS image.
pub fn acs_lowres_maps(y: &CoilStack, mask: &SamplingMask, taper: Taper) -> Result<SenseMaps> {
    if y.height() != mask.height() || y.width() != mask.width() {
        return Err(Error::ShapeMismatch("kspace vs mask".into()));
    }
    let (h, w) = (y.height(), y.width());
    let weights: Vec<f64> = match mask.acs() {
        AcsRegion::None => {
            return Err(Error::Calibration("mask has no autocalibration region".into()))
        }
        AcsRegion::Lines { count } => {
            let cols = center_range(w, count);
            let mut wts = vec![0.0; h * w];
            for i in 0..h {
                for (off, j) in cols.clone().enumerate() {
                    wts[i * w + j] = taper_weight(taper, off, count);
                }
            }
            wts
        }
        AcsRegion::Block { count } => {
            let rows = center_range(h, count);
            let cols = center_range(w, count);
            let mut wts = vec![0.0; h * w];
            for (ri, i) in rows.clone().enumerate() {
                for (ci, j) in cols.clone().enumerate() {
                    wts[i * w + j] =
                        taper_weight(taper, ri, count) * taper_weight(taper, ci, count);
                }
            }
            wts
        }
    };
    let mut lowres = Vec::with_capacity(y.coils());
    for j in 0..y.coils() {
        let mut k = y.coil_image(j);
        for (v, &wt) in k.data_mut().iter_mut().zip(&weights) {
            *v *= wt;
        }
        lowres.push(ifft2c(&k)?);
    }
    SenseMaps::from_profiles(&CoilStack::from_planes(&lowres)?, DEFAULT_EPS_REL)
}

/// Bivariate polynomial coil profile model: per coil, a tensor-product
/// Chebyshev expansion over the pixel grid mapped to `[-1, 1]^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMapModel {
    degree: usize,
    coils: usize,
    /// Per coil, `(degree+1)^2` coefficients in row-major `(p, q)` order.
    coeffs: Vec<Vec<C64>>,
}

/// Chebyshev values `T_0(u) .. T_d(u)`.
fn cheb_values(u: f64, degree: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(degree + 1);
    t.push(1.0);
    if degree >= 1 {
        t.push(u);
    }
    for k in 2..=degree {
        t.push(2.0 * u * t[k - 1] - t[k - 2]);
    }
    t
}

fn axis_coord(i: usize, len: usize) -> f64 {
    if len <= 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (len - 1) as f64
    }
}

/// Basis functions evaluated over the grid: `basis[m][pixel]` for
/// `m = p*(degree+1)+q`, `phi_m(i,j) = T_p(v_i) T_q(u_j)`.
fn basis_grid(h: usize, w: usize, degree: usize) -> Vec<Vec<f64>> {
    let n = degree + 1;
    let row_vals: Vec<Vec<f64>> = (0..h).map(|i| cheb_values(axis_coord(i, h), degree)).collect();
    let col_vals: Vec<Vec<f64>> = (0..w).map(|j| cheb_values(axis_coord(j, w), degree)).collect();
    let mut basis = vec![vec![0.0; h * w]; n * n];
    for p in 0..n {
        for q in 0..n {
            let dst = &mut basis[p * n + q];
            for i in 0..h {
                let tp = row_vals[i][p];
                for j in 0..w {
                    dst[i * w + j] = tp * col_vals[j][q];
                }
            }
        }
    }
    basis
}

impl PolyMapModel {
    pub fn new(degree: usize, coeffs: Vec<Vec<C64>>) -> Result<Self> {
        let m = (degree + 1) * (degree + 1);
        if coeffs.is_empty() || coeffs.iter().any(|c| c.len() != m) {
            return Err(Error::ShapeMismatch("polynomial coefficient count".into()));
        }
        Ok(Self { degree, coils: coeffs.len(), coeffs })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }
    pub fn coils(&self) -> usize {
        self.coils
    }
    pub fn coeffs(&self) -> &[Vec<C64>] {
        &self.coeffs
    }

    /// Raw (un-normalized) coil profiles on an `h`x`w` grid.
    pub fn eval_profiles(&self, h: usize, w: usize) -> CoilStack {
        let basis = basis_grid(h, w, self.degree);
        let mut data = vec![C64::new(0.0, 0.0); self.coils * h * w];
        for (j, coeffs) in self.coeffs.iter().enumerate() {
            let plane = &mut data[j * h * w..(j + 1) * h * w];
            for (c, phi) in coeffs.iter().zip(&basis) {
                if c.norm_sqr() == 0.0 {
                    continue;
                }
                for (dst, &b) in plane.iter_mut().zip(phi) {
                    *dst += c * b;
                }
            }
        }
        CoilStack::new(self.coils, h, w, data).expect("sized above")
    }
}

/// Outcome of a polynomial map fit.
#[derive(Debug, Clone)]
pub struct PolyFit {
    pub model: PolyMapModel,
    /// Worst per-coil relative normal-equation residual.
    pub rel_residual: f64,
    /// True when a ridge term was required to solve the normal equations.
    pub ridged: bool,
}

/// Complex LU solve with partial pivoting; `a` is `m`x`m` row-major and is
/// consumed. Returns `None` when a pivot vanishes.
fn solve_complex(mut a: Vec<C64>, mut b: Vec<C64>, m: usize) -> Option<Vec<C64>> {
    for col in 0..m {
        let mut pivot = col;
        let mut best = a[col * m + col].norm_sqr();
        for r in col + 1..m {
            let mag = a[r * m + col].norm_sqr();
            if mag > best {
                best = mag;
                pivot = r;
            }
        }
        if best <= f64::MIN_POSITIVE {
            return None;
        }
        if pivot != col {
            for j in 0..m {
                a.swap(col * m + j, pivot * m + j);
            }
            b.swap(col, pivot);
        }
        let inv = C64::new(1.0, 0.0) / a[col * m + col];
        for r in col + 1..m {
            let factor = a[r * m + col] * inv;
            if factor.norm_sqr() == 0.0 {
                continue;
            }
            for j in col..m {
                let v = a[col * m + j];
                a[r * m + j] -= factor * v;
            }
            let bc = b[col];
            b[r] -= factor * bc;
        }
    }
    let mut x = vec![C64::new(0.0, 0.0); m];
    for col in (0..m).rev() {
        let mut acc = b[col];
        for j in col + 1..m {
            acc -= a[col * m + j] * x[j];
        }
        x[col] = acc / a[col * m + col];
    }
    Some(x)
}

/// Per coil, least-squares fit of polynomial coefficients `c` minimizing
/// `|| y_j - U F (P(c) .* x) ||_2` over the sampled positions, via the normal
/// equations. Rank-deficient systems fall back to a ridge of `1e-10` times
/// the mean diagonal.
pub fn fit_poly_maps(
    x: &ComplexImage,
    y: &CoilStack,
    mask: &SamplingMask,
    degree: usize,
) -> Result<PolyFit> {
    if x.height() != y.height() || x.width() != y.width() {
        return Err(Error::ShapeMismatch("image vs kspace".into()));
    }
    if x.norm2() == 0.0 {
        return Err(Error::DegenerateFit("image is identically zero".into()));
    }
    let (h, w) = (x.height(), x.width());
    let n_basis = (degree + 1) * (degree + 1);
    let omega: Vec<usize> =
        (0..h * w).filter(|&p| mask.omega()[p]).collect();
    if omega.len() < n_basis {
        return Err(Error::DegenerateFit(format!(
            "{} sampled positions cannot determine {} coefficients",
            omega.len(),
            n_basis
        )));
    }

    // columns of the design matrix restricted to the sampled set
    let basis = basis_grid(h, w, degree);
    let mut cols: Vec<Vec<C64>> = Vec::with_capacity(n_basis);
    for phi in &basis {
        let mut img = x.clone();
        for (v, &b) in img.data_mut().iter_mut().zip(phi) {
            *v *= b;
        }
        let k = fft2c(&img)?;
        cols.push(omega.iter().map(|&p| k.data()[p]).collect());
    }

    // gram matrix and per-coil right-hand sides
    let mut gram = vec![C64::new(0.0, 0.0); n_basis * n_basis];
    for a in 0..n_basis {
        for b in a..n_basis {
            let v: C64 = cols[a].iter().zip(&cols[b]).map(|(p, q)| p.conj() * q).sum();
            gram[a * n_basis + b] = v;
            gram[b * n_basis + a] = v.conj();
        }
    }
    let mean_diag =
        (0..n_basis).map(|i| gram[i * n_basis + i].re).sum::<f64>() / n_basis as f64;

    let mut coeffs = Vec::with_capacity(y.coils());
    let mut worst_residual = 0.0f64;
    let mut ridged = false;
    for j in 0..y.coils() {
        let yj: Vec<C64> = omega.iter().map(|&p| y.plane(j)[p]).collect();
        let rhs: Vec<C64> =
            cols.iter().map(|col| col.iter().zip(&yj).map(|(a, b)| a.conj() * b).sum()).collect();
        let solved = solve_complex(gram.clone(), rhs.clone(), n_basis);
        let (sol, used_ridge) = match solved {
            Some(sol) if residual(&gram, &sol, &rhs) < 1e-8 => (sol, false),
            _ => {
                let mut ridged_gram = gram.clone();
                for i in 0..n_basis {
                    ridged_gram[i * n_basis + i] += C64::new(1e-10 * mean_diag.max(1e-300), 0.0);
                }
                let sol = solve_complex(ridged_gram, rhs.clone(), n_basis).ok_or_else(|| {
                    Error::DegenerateFit("normal equations singular even with ridge".into())
                })?;
                (sol, true)
            }
        };
        ridged |= used_ridge;
        worst_residual = worst_residual.max(residual(&gram, &sol, &rhs));
        coeffs.push(sol);
    }
    Ok(PolyFit { model: PolyMapModel::new(degree, coeffs)?, rel_residual: worst_residual, ridged })
}

fn residual(gram: &[C64], sol: &[C64], rhs: &[C64]) -> f64 {
    let m = sol.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..m {
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..m {
            acc += gram[i * m + j] * sol[j];
        }
        num += (acc - rhs[i]).norm_sqr();
        den += rhs[i].norm_sqr();
    }
    (num / den.max(1e-300)).sqrt()
}

/// Evaluate a fitted model on the pixel grid and SoS-normalize so the result
/// satisfies the [`SenseMaps`] invariant.
pub fn eval_poly_maps(model: &PolyMapModel, h: usize, w: usize) -> Result<SenseMaps> {
    SenseMaps::from_profiles(&model.eval_profiles(h, w), DEFAULT_EPS_REL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::make_mask_1d;
    use crate::numerics::rel_err;
    use rand::Rng;

    fn random_phantomish(h: usize, w: usize, seed: u64) -> ComplexImage {
        let mut rng = crate::rng::stream(seed, "calib-test", 0);
        ComplexImage::from_fn(h, w, |i, j| {
            let bump = (-(((i as f64 / h as f64) - 0.5).powi(2)
                + ((j as f64 / w as f64) - 0.5).powi(2))
                * 8.0)
                .exp();
            C64::new(bump + 0.1 + 0.05 * rng.gen::<f64>(), 0.0)
        })
    }

    #[test]
    fn gt_maps_single_coil_positive_image() {
        let img = random_phantomish(8, 8, 1);
        let stack = CoilStack::from_planes(&[img]).unwrap();
        let maps = gt_maps(&stack, 1e-6).unwrap();
        for (p, &fg) in maps.foreground().iter().enumerate() {
            if fg {
                assert!((maps.plane(0)[p] - C64::new(1.0, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn gt_maps_quadrature_pair() {
        let img = random_phantomish(8, 8, 2);
        let rotated = ComplexImage::new(
            8,
            8,
            img.data().iter().map(|v| v * C64::new(0.0, 1.0)).collect(),
        )
        .unwrap();
        let stack = CoilStack::from_planes(&[img, rotated]).unwrap();
        let maps = gt_maps(&stack, 1e-6).unwrap();
        for (p, &fg) in maps.foreground().iter().enumerate() {
            if fg {
                assert!((maps.plane(0)[p].norm() - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
                assert!((maps.plane(1)[p].norm() - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gt_maps_unit_sos_and_reconstruction_identity() {
        let planes: Vec<ComplexImage> = (0..3)
            .map(|s| {
                let img = random_phantomish(12, 12, 10 + s);
                ComplexImage::new(
                    12,
                    12,
                    img.data().iter().map(|v| v * C64::from_polar(1.0, 0.3 * s as f64)).collect(),
                )
                .unwrap()
            })
            .collect();
        let stack = CoilStack::from_planes(&planes).unwrap();
        let maps = gt_maps(&stack, 1e-6).unwrap();
        let s = crate::numerics::sos(&stack).unwrap();
        let n = 144;
        for p in 0..n {
            if maps.foreground()[p] {
                let mut acc = 0.0;
                for j in 0..3 {
                    acc += maps.plane(j)[p].norm_sqr();
                    // defining identity: S_j * sos = x_j
                    let back = maps.plane(j)[p] * s.data()[p].re;
                    assert!((back - stack.plane(j)[p]).norm() < 1e-12);
                }
                assert!((acc - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gt_maps_all_zero_rejected() {
        let stack = CoilStack::zeros(2, 4, 4);
        assert!(matches!(gt_maps(&stack, 1e-6), Err(Error::Calibration(_))));
    }

    #[test]
    fn acs_full_grid_no_taper_matches_gt() {
        let (h, w) = (16, 16);
        let maps_true = crate::testutil::smooth_full_maps(3, h, w, 3);
        let truth = random_phantomish(h, w, 4);
        let coil_imgs = maps_true.expand(&truth).unwrap();
        let ksp = CoilStack::from_planes(
            &(0..3).map(|j| fft2c(&coil_imgs.coil_image(j)).unwrap()).collect::<Vec<_>>(),
        )
        .unwrap();
        // ACS block spanning the whole grid
        let mask = crate::mask::make_mask_2d(w, h, 1.0, w, 0).unwrap();
        let est = acs_lowres_maps(&ksp, &mask, Taper::None).unwrap();
        let gt = gt_maps(&coil_imgs, DEFAULT_EPS_REL).unwrap();
        assert!(rel_err(est.data(), gt.data()) < 1e-10);
    }

    #[test]
    fn acs_maps_need_a_calibration_region() {
        let ksp = CoilStack::zeros(2, 8, 8);
        let mask = make_mask_1d(8, 8, 2.0, 0, 1).unwrap();
        assert!(matches!(acs_lowres_maps(&ksp, &mask, Taper::RaisedCosine), Err(Error::Calibration(_))));
    }

    #[test]
    fn degree_zero_single_coil_recovers_constant() {
        let (h, w) = (12, 12);
        let x = random_phantomish(h, w, 5);
        let c = C64::new(0.8, -0.4);
        let coil = ComplexImage::new(h, w, x.data().iter().map(|v| v * c).collect()).unwrap();
        let y = CoilStack::from_planes(&[fft2c(&coil).unwrap()]).unwrap();
        let mask = make_mask_1d(w, h, 1.0, 0, 0).unwrap();
        let fit = fit_poly_maps(&x, &y, &mask, 0).unwrap();
        assert!((fit.model.coeffs()[0][0] - c).norm() < 1e-10);
        assert!(!fit.ridged);
    }

    #[test]
    fn known_polynomial_model_round_trip() {
        let (h, w) = (16, 16);
        let degree = 4;
        let mut rng = crate::rng::stream(6, "calib-test", 1);
        let n = (degree + 1) * (degree + 1);
        let coeffs: Vec<Vec<C64>> = (0..2)
            .map(|_| {
                (0..n)
                    .map(|m| {
                        // decaying spectrum keeps profiles smooth
                        let scale = 1.0 / (1.0 + m as f64);
                        C64::new(
                            scale * (rng.gen::<f64>() - 0.5),
                            scale * (rng.gen::<f64>() - 0.5),
                        )
                    })
                    .collect()
            })
            .collect();
        // keep profiles bounded away from zero so normalization is benign
        let mut coeffs = coeffs;
        coeffs[0][0] += C64::new(2.0, 0.0);
        coeffs[1][0] += C64::new(0.0, 2.0);
        let model_true = PolyMapModel::new(degree, coeffs).unwrap();
        let profiles = model_true.eval_profiles(h, w);
        let x = random_phantomish(h, w, 7);
        let y = CoilStack::from_planes(
            &(0..2)
                .map(|j| {
                    let prod = ComplexImage::new(
                        h,
                        w,
                        profiles.plane(j).iter().zip(x.data()).map(|(s, v)| s * v).collect(),
                    )
                    .unwrap();
                    fft2c(&prod).unwrap()
                })
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let mask = make_mask_1d(w, h, 1.0, 0, 0).unwrap();
        let fit = fit_poly_maps(&x, &y, &mask, degree).unwrap();
        for j in 0..2 {
            for (a, b) in fit.model.coeffs()[j].iter().zip(&model_true.coeffs()[j]) {
                assert!((a - b).norm() < 1e-8, "coefficient mismatch {a} vs {b}");
            }
        }
        // normalized map round trip
        let est = eval_poly_maps(&fit.model, h, w).unwrap();
        let truth = SenseMaps::from_profiles(&profiles, DEFAULT_EPS_REL).unwrap();
        assert!(rel_err(est.data(), truth.data()) < 1e-8);
        assert!(fit.rel_residual < 1e-8);
    }

    #[test]
    fn refit_of_model_synthesis_is_fixed_point() {
        let (h, w) = (16, 16);
        let degree = 3;
        let x = random_phantomish(h, w, 8);
        let mask = make_mask_1d(w, h, 2.0, 4, 2).unwrap();
        // arbitrary starting data: a smooth two-coil acquisition
        let maps0 = crate::testutil::smooth_full_maps(2, h, w, 9);
        let y0 = crate::sense::sense_forward(&maps0, &x, &mask).unwrap();
        let fit1 = fit_poly_maps(&x, &y0, &mask, degree).unwrap();
        // synthesize data exactly in the model class, then refit
        let profiles = fit1.model.eval_profiles(h, w);
        let y1 = CoilStack::from_planes(
            &(0..2)
                .map(|j| {
                    let prod = ComplexImage::new(
                        h,
                        w,
                        profiles.plane(j).iter().zip(x.data()).map(|(s, v)| s * v).collect(),
                    )
                    .unwrap();
                    let mut k = fft2c(&prod).unwrap();
                    for (p, v) in k.data_mut().iter_mut().enumerate() {
                        if !mask.omega()[p] {
                            *v = C64::new(0.0, 0.0);
                        }
                    }
                    k
                })
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let fit2 = fit_poly_maps(&x, &y1, &mask, degree).unwrap();
        for j in 0..2 {
            let a = &fit1.model.coeffs()[j];
            let b = &fit2.model.coeffs()[j];
            let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
            let norm: f64 = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            assert!(diff / norm < 1e-9, "coil {j}: {diff} vs {norm}");
        }
    }

    #[test]
    fn zero_image_fit_rejected_and_zero_model_eval_rejected() {
        let (h, w) = (8, 8);
        let mask = make_mask_1d(w, h, 1.0, 0, 0).unwrap();
        let y = CoilStack::zeros(1, h, w);
        assert!(matches!(
            fit_poly_maps(&ComplexImage::zeros(h, w), &y, &mask, 2),
            Err(Error::DegenerateFit(_))
        ));
        let zero_model =
            PolyMapModel::new(1, vec![vec![C64::new(0.0, 0.0); 4]]).unwrap();
        assert!(matches!(eval_poly_maps(&zero_model, h, w), Err(Error::Calibration(_))));
    }

    #[test]
    fn constant_single_coil_model_normalizes_to_unit_magnitude() {
        let c = C64::new(0.3, 0.4);
        let mut coeffs = vec![C64::new(0.0, 0.0); 4];
        coeffs[0] = c;
        let model = PolyMapModel::new(1, vec![coeffs]).unwrap();
        let maps = eval_poly_maps(&model, 8, 8).unwrap();
        let phase = c / c.norm();
        for p in 0..64 {
            assert!(maps.foreground()[p]);
            assert!((maps.plane(0)[p] - phase).norm() < 1e-12);
        }
    }
}
