//! Non-learned reconstructions: CG-SENSE, pFISTA-SENSE with an orthonormal
//! Haar l1 penalty, and the alternating joint sensitivity/image estimation
//! with polynomial maps.

use crate::calib::{acs_lowres_maps, fit_poly_maps, Taper, DEFAULT_EPS_REL};
use crate::error::{Error, Result};
use crate::mask::SamplingMask;
use crate::numerics::{sos, ComplexImage, CoilStack, C64};
use crate::sense::{sense_adjoint, sense_forward, SenseMaps};
use crate::wavelet::{haar2_forward, haar2_inverse};
use std::time::Instant;

/// One solver iteration record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterLog {
    pub iter: usize,
    pub objective: f64,
    pub residual: f64,
    pub seconds: f64,
}

/// CSV rendering of an iteration log (`iteration,objective,residual,seconds`).
pub fn iterlog_csv(log: &[IterLog]) -> String {
    let mut out = String::from("iteration,objective,residual,seconds\n");
    for rec in log {
        out.push_str(&format!(
            "{},{:.17e},{:.17e},{:.6}\n",
            rec.iter, rec.objective, rec.residual, rec.seconds
        ));
    }
    out
}

pub const CG_DEFAULT_TOL: f64 = 1e-6;
pub const CG_DEFAULT_MAX_ITERS: usize = 50;
pub const JSENSE_DEFAULT_OUTER: usize = 8;
pub const JSENSE_DEFAULT_DEGREE: usize = 6;

fn axpy(dst: &mut [C64], a: C64, src: &[C64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

fn data_fidelity(y: &CoilStack, maps: &SenseMaps, x: &ComplexImage, mask: &SamplingMask) -> Result<f64> {
    let ex = sense_forward(maps, x, mask)?;
    Ok(ex.data().iter().zip(y.data()).map(|(a, b)| (a - b).norm_sqr()).sum())
}

/// Solve `E^H E x = E^H y` with the conjugate-residual Krylov iteration,
/// which drives the normal-equation residual down monotonically. Stops at
/// relative residual `tol` or after `max_iters` products.
pub fn cg_sense(
    y: &CoilStack,
    maps: &SenseMaps,
    mask: &SamplingMask,
    max_iters: usize,
    tol: f64,
) -> Result<(ComplexImage, Vec<IterLog>)> {
    cg_sense_from(None, y, maps, mask, max_iters, tol)
}

/// [`cg_sense`] with a warm start.
pub fn cg_sense_from(
    x0: Option<&ComplexImage>,
    y: &CoilStack,
    maps: &SenseMaps,
    mask: &SamplingMask,
    max_iters: usize,
    tol: f64,
) -> Result<(ComplexImage, Vec<IterLog>)> {
    let start = Instant::now();
    let normal = |x: &ComplexImage| -> Result<ComplexImage> {
        sense_adjoint(maps, &sense_forward(maps, x, mask)?, mask)
    };
    let b = sense_adjoint(maps, y, mask)?;
    let b_norm = b.norm2();
    let mut x = match x0 {
        Some(v) => v.clone(),
        None => ComplexImage::zeros(b.height(), b.width()),
    };
    let mut log = Vec::new();
    if b_norm == 0.0 {
        // zero data: the least-squares solution is zero
        return Ok((ComplexImage::zeros(b.height(), b.width()), log));
    }
    let mut r = b.clone();
    if x.norm2() > 0.0 {
        let ax = normal(&x)?;
        for (rv, av) in r.data_mut().iter_mut().zip(ax.data()) {
            *rv -= av;
        }
    }
    let mut ar = normal(&r)?;
    let mut p = r.clone();
    let mut ap = ar.clone();
    let mut r_ar = crate::numerics::inner(r.data(), ar.data()).re;
    for iter in 0..max_iters {
        if r.norm2() / b_norm <= tol {
            break;
        }
        let ap_ap: f64 = ap.data().iter().map(|v| v.norm_sqr()).sum();
        if ap_ap <= f64::MIN_POSITIVE || r_ar.abs() <= f64::MIN_POSITIVE {
            break; // remaining residual lies in the null space
        }
        let alpha = C64::new(r_ar / ap_ap, 0.0);
        axpy(x.data_mut(), alpha, p.data());
        axpy(r.data_mut(), -alpha, ap.data());
        ar = normal(&r)?;
        let r_ar_new = crate::numerics::inner(r.data(), ar.data()).re;
        let beta = C64::new(r_ar_new / r_ar, 0.0);
        r_ar = r_ar_new;
        let mut p_next = r.clone();
        axpy(p_next.data_mut(), beta, p.data());
        p = p_next;
        let mut ap_next = ar.clone();
        axpy(ap_next.data_mut(), beta, ap.data());
        ap = ap_next;
        if !x.is_finite() {
            return Err(Error::Divergence(format!("non-finite iterate at iteration {iter}")));
        }
        log.push(IterLog {
            iter: iter + 1,
            objective: data_fidelity(y, maps, &x, mask)?,
            residual: r.norm2() / b_norm,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((x, log))
}

/// Complex soft-thresholding `max(|v| - t, 0) * v / |v|`.
pub fn soft_complex(v: C64, t: f64) -> C64 {
    let mag = v.norm();
    if mag <= t {
        C64::new(0.0, 0.0)
    } else {
        v * ((mag - t) / mag)
    }
}

const HAAR_LEVELS: usize = 2;

fn pfista_objective(
    y: &CoilStack,
    maps: &SenseMaps,
    mask: &SamplingMask,
    x: &ComplexImage,
    reg: f64,
) -> Result<f64> {
    let fid = data_fidelity(y, maps, x, mask)?;
    let coeffs = haar2_forward(x, HAAR_LEVELS)?;
    let l1: f64 = coeffs.data().iter().map(|v| v.norm()).sum();
    Ok(0.5 * fid + reg * l1)
}

fn pfista_prox_step(
    z: &ComplexImage,
    y: &CoilStack,
    maps: &SenseMaps,
    mask: &SamplingMask,
    reg: f64,
) -> Result<ComplexImage> {
    let ez = sense_forward(maps, z, mask)?;
    let mut resid = ez;
    for (r, m) in resid.data_mut().iter_mut().zip(y.data()) {
        *r -= m;
    }
    let grad = sense_adjoint(maps, &resid, mask)?;
    let mut stepped = z.clone();
    for (s, g) in stepped.data_mut().iter_mut().zip(grad.data()) {
        *s -= g;
    }
    let mut coeffs = haar2_forward(&stepped, HAAR_LEVELS)?;
    for c in coeffs.data_mut() {
        *c = soft_complex(*c, reg);
    }
    haar2_inverse(&coeffs, HAAR_LEVELS)
}

/// Proximal FISTA on `0.5 ||y - Ex||^2 + reg ||W x||_1` with unit step (valid
/// because unit-SoS maps give `||E|| <= 1`), a 2-level orthonormal Haar `W`,
/// and a restart that falls back to the plain proximal-gradient step whenever
/// the accelerated candidate would raise the objective.
pub fn pfista_sense(
    y: &CoilStack,
    maps: &SenseMaps,
    mask: &SamplingMask,
    reg_lambda: f64,
    max_iters: usize,
) -> Result<(ComplexImage, Vec<IterLog>)> {
    if reg_lambda < 0.0 {
        return Err(Error::Parameter("regularization weight must be >= 0".into()));
    }
    let start = Instant::now();
    let mut x = sense_adjoint(maps, y, mask)?;
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut obj = pfista_objective(y, maps, mask, &x, reg_lambda)?;
    let initial_obj = obj.max(f64::MIN_POSITIVE);
    let mut log = vec![IterLog { iter: 0, objective: obj, residual: f64::NAN, seconds: 0.0 }];
    for iter in 1..=max_iters {
        let mut cand = pfista_prox_step(&z, y, maps, mask, reg_lambda)?;
        let mut cand_obj = pfista_objective(y, maps, mask, &cand, reg_lambda)?;
        if cand_obj > obj {
            // restart: a monotone proximal-gradient step from the last iterate
            cand = pfista_prox_step(&x, y, maps, mask, reg_lambda)?;
            cand_obj = pfista_objective(y, maps, mask, &cand, reg_lambda)?;
            t = 1.0;
        }
        if !cand_obj.is_finite() || cand_obj > 10.0 * initial_obj {
            return Err(Error::Divergence(format!(
                "objective {cand_obj} exceeded 10x initial after {iter} iterations ({} log entries)",
                log.len()
            )));
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        let mut z_next = cand.clone();
        for ((zv, cv), xv) in z_next.data_mut().iter_mut().zip(cand.data()).zip(x.data()) {
            *zv = *cv + (*cv - *xv) * momentum;
        }
        z = z_next;
        x = cand;
        obj = cand_obj;
        t = t_next;
        let resid = data_fidelity(y, maps, &x, mask)?.sqrt() / y.norm2().max(f64::MIN_POSITIVE);
        log.push(IterLog {
            iter,
            objective: obj,
            residual: resid,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((x, log))
}

/// Alternating joint estimation: CG image updates interleaved with polynomial
/// sensitivity refits. Both updates are guarded so the end-of-iteration data
/// fidelity never increases beyond round-off slack.
///
/// Each image update is a fresh, budget-limited CG solve: with imperfect maps
/// the exact least-squares solution is semi-convergent (fidelity keeps
/// falling while the image drifts), so iterations must not accumulate across
/// outer rounds. A warm-started continuation is used only as a fallback when
/// the fresh solve would raise the fidelity.
pub fn jsense(
    y: &CoilStack,
    mask: &SamplingMask,
    outer_iters: usize,
    degree: usize,
    init: Option<(SenseMaps, ComplexImage)>,
) -> Result<(ComplexImage, SenseMaps, Vec<IterLog>)> {
    let start = Instant::now();
    let (mut maps, mut x) = match init {
        Some(pair) => (pair.0, pair.1),
        None => {
            let maps = acs_lowres_maps(y, mask, Taper::RaisedCosine)?;
            let x = sense_adjoint(&maps, y, mask)?;
            (maps, x)
        }
    };
    let mut log = Vec::new();
    let mut fid = data_fidelity(y, &maps, &x, mask)?;
    for outer in 0..outer_iters {
        // image update
        let (x_fresh, _) = cg_sense(y, &maps, mask, CG_DEFAULT_MAX_ITERS, CG_DEFAULT_TOL)?;
        let fid_fresh = data_fidelity(y, &maps, &x_fresh, mask)?;
        if fid_fresh <= fid {
            x = x_fresh;
            fid = fid_fresh;
        } else {
            let (x_warm, _) =
                cg_sense_from(Some(&x), y, &maps, mask, CG_DEFAULT_MAX_ITERS, CG_DEFAULT_TOL)?;
            let fid_warm = data_fidelity(y, &maps, &x_warm, mask)?;
            if fid_warm <= fid {
                x = x_warm;
                fid = fid_warm;
            }
        }
        // sensitivity update: fit raw polynomial profiles, then renormalize
        // while rescaling the image so the coil products are unchanged
        match fit_poly_maps(&x, y, mask, degree) {
            Ok(fit) => {
                let profiles = fit.model.eval_profiles(maps.height(), maps.width());
                if let Ok(maps_cand) = SenseMaps::from_profiles(&profiles, DEFAULT_EPS_REL) {
                    let scale = sos(&profiles)?;
                    let mut x_cand = x.clone();
                    for (v, s) in x_cand.data_mut().iter_mut().zip(scale.data()) {
                        *v *= s.re;
                    }
                    let fid_cand = data_fidelity(y, &maps_cand, &x_cand, mask)?;
                    if fid_cand <= fid + 1e-8 * fid.max(1.0) {
                        maps = maps_cand;
                        x = x_cand;
                        fid = fid_cand;
                    }
                }
            }
            Err(e) => return Err(e),
        }
        log.push(IterLog {
            iter: outer + 1,
            objective: fid,
            residual: fid.sqrt() / y.norm2().max(f64::MIN_POSITIVE),
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((x, maps, log))
}
