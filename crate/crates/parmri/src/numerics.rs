//! Complex 2D array primitives and centered unitary Fourier transforms.
//!
//! The "centered" convention keeps the DC component at the array center
//! `(h/2, w/2)`, so autocalibration rows/columns of k-space sit in the middle
//! of the grid. Both directions are scaled by `1/sqrt(h*w)`, making the pair
//! unitary: `fft2c` and `ifft2c` are exact inverses and exact adjoints of one
//! another.

use crate::error::{Error, Result};
use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::sync::Arc;

pub type C64 = Complex<f64>;

/// Floating point type that rustfft can transform. Implemented for `f32` and
/// `f64`; each keeps its own thread-local plan cache.
pub trait FftScalar: rustfft::FftNum + num_traits::Float {
    fn fft_plan(len: usize, inverse: bool) -> Arc<dyn Fft<Self>>;
}

thread_local! {
    static PLANNER_F64: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
    static PLANNER_F32: RefCell<FftPlanner<f32>> = RefCell::new(FftPlanner::new());
}

impl FftScalar for f64 {
    fn fft_plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
        PLANNER_F64.with(|p| {
            let mut p = p.borrow_mut();
            if inverse {
                p.plan_fft_inverse(len)
            } else {
                p.plan_fft_forward(len)
            }
        })
    }
}

impl FftScalar for f32 {
    fn fft_plan(len: usize, inverse: bool) -> Arc<dyn Fft<f32>> {
        PLANNER_F32.with(|p| {
            let mut p = p.borrow_mut();
            if inverse {
                p.plan_fft_inverse(len)
            } else {
                p.plan_fft_forward(len)
            }
        })
    }
}

/// fftshift along both axes of a row-major `h`x`w` plane: index 0 moves to
/// the center. For even sizes this is its own inverse.
pub fn fftshift2<T>(buf: &mut [T], h: usize, w: usize) {
    debug_assert_eq!(buf.len(), h * w);
    buf.rotate_right((h / 2) * w);
    for row in buf.chunks_exact_mut(w) {
        row.rotate_right(w / 2);
    }
}

/// Inverse of [`fftshift2`]: the center sample moves to index 0.
pub fn ifftshift2<T>(buf: &mut [T], h: usize, w: usize) {
    debug_assert_eq!(buf.len(), h * w);
    buf.rotate_left((h / 2) * w);
    for row in buf.chunks_exact_mut(w) {
        row.rotate_left(w / 2);
    }
}

/// In-place centered unitary 2D DFT of a row-major plane.
/// `inverse = false` maps image to k-space, `true` maps back.
pub fn fft2c_plane<R: FftScalar>(buf: &mut [Complex<R>], h: usize, w: usize, inverse: bool) {
    assert_eq!(buf.len(), h * w, "plane length must be h*w");
    ifftshift2(buf, h, w);
    let row_fft = R::fft_plan(w, inverse);
    let col_fft = R::fft_plan(h, inverse);
    let mut scratch =
        vec![Complex::new(R::zero(), R::zero()); row_fft.get_inplace_scratch_len().max(col_fft.get_inplace_scratch_len())];
    for row in buf.chunks_exact_mut(w) {
        row_fft.process_with_scratch(row, &mut scratch);
    }
    let mut col = vec![Complex::new(R::zero(), R::zero()); h];
    for j in 0..w {
        for i in 0..h {
            col[i] = buf[i * w + j];
        }
        col_fft.process_with_scratch(&mut col, &mut scratch);
        for i in 0..h {
            buf[i * w + j] = col[i];
        }
    }
    fftshift2(buf, h, w);
    let scale = R::one() / R::from((h * w) as f64).unwrap().sqrt();
    for v in buf.iter_mut() {
        *v = *v * scale;
    }
}

/// A dense complex image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    height: usize,
    width: usize,
    data: Vec<C64>,
}

impl ComplexImage {
    pub fn new(height: usize, width: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "image data length {} != {}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![C64::new(0.0, 0.0); height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self { height, width, data }
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
    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }
    pub fn at(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.width + j]
    }
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.width + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Pointwise magnitudes.
    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.norm()).collect()
    }
}

/// A stack of per-coil complex planes sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilStack {
    coils: usize,
    height: usize,
    width: usize,
    data: Vec<C64>,
}

impl CoilStack {
    pub fn new(coils: usize, height: usize, width: usize, data: Vec<C64>) -> Result<Self> {
        if coils == 0 {
            return Err(Error::InvalidInput("coil stack needs at least one coil".into()));
        }
        if data.len() != coils * height * width {
            return Err(Error::ShapeMismatch(format!(
                "stack data length {} != {}x{}x{}",
                data.len(),
                coils,
                height,
                width
            )));
        }
        Ok(Self { coils, height, width, data })
    }

    pub fn zeros(coils: usize, height: usize, width: usize) -> Self {
        Self { coils, height, width, data: vec![C64::new(0.0, 0.0); coils * height * width] }
    }

    pub fn from_planes(planes: &[ComplexImage]) -> Result<Self> {
        if planes.is_empty() {
            return Err(Error::InvalidInput("empty coil list".into()));
        }
        let (h, w) = (planes[0].height(), planes[0].width());
        let mut data = Vec::with_capacity(planes.len() * h * w);
        for p in planes {
            if p.height() != h || p.width() != w {
                return Err(Error::ShapeMismatch("coil planes differ in size".into()));
            }
            data.extend_from_slice(p.data());
        }
        Self::new(planes.len(), h, w, data)
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
    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn plane(&self, j: usize) -> &[C64] {
        let n = self.height * self.width;
        &self.data[j * n..(j + 1) * n]
    }
    pub fn plane_mut(&mut self, j: usize) -> &mut [C64] {
        let n = self.height * self.width;
        &mut self.data[j * n..(j + 1) * n]
    }

    pub fn coil_image(&self, j: usize) -> ComplexImage {
        ComplexImage { height: self.height, width: self.width, data: self.plane(j).to_vec() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Centered unitary 2D Fourier transform, image to k-space.
pub fn fft2c(img: &ComplexImage) -> Result<ComplexImage> {
    if !img.is_finite() {
        return Err(Error::InvalidInput("fft2c: non-finite input".into()));
    }
    let mut out = img.clone();
    fft2c_plane(&mut out.data, out.height, out.width, false);
    Ok(out)
}

/// Centered unitary 2D Fourier transform, k-space to image. Exact inverse and
/// adjoint of [`fft2c`].
pub fn ifft2c(ksp: &ComplexImage) -> Result<ComplexImage> {
    if !ksp.is_finite() {
        return Err(Error::InvalidInput("ifft2c: non-finite input".into()));
    }
    let mut out = ksp.clone();
    fft2c_plane(&mut out.data, out.height, out.width, true);
    Ok(out)
}

/// Pixelwise sqrt of summed squared coil magnitudes. Real, non-negative.
pub fn sos(stack: &CoilStack) -> Result<ComplexImage> {
    if !stack.is_finite() {
        return Err(Error::InvalidInput("sos: non-finite input".into()));
    }
    let n = stack.height * stack.width;
    let mut acc = vec![0.0f64; n];
    for j in 0..stack.coils {
        for (a, v) in acc.iter_mut().zip(stack.plane(j)) {
            *a += v.norm_sqr();
        }
    }
    let data = acc.into_iter().map(|a| C64::new(a.sqrt(), 0.0)).collect();
    ComplexImage::new(stack.height, stack.width, data)
}

/// Complex inner product `<a, b> = sum conj(a_i) b_i`.
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm2(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Relative l2 distance `|a - b| / max(|b|, tiny)`.
pub fn rel_err(a: &[C64], b: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let den = norm2(b);
    num / den.max(1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ComplexImage {
        let mut rng = crate::rng::stream(seed, "numerics-test", 0);
        ComplexImage::from_fn(h, w, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
    }

    #[test]
    fn impulse_at_center_transforms_to_constant() {
        let mut img = ComplexImage::zeros(8, 8);
        img.set(4, 4, C64::new(1.0, 0.0));
        let k = fft2c(&img).unwrap();
        for v in k.data() {
            assert!((v.norm() - 1.0 / 8.0).abs() < 1e-14);
            assert!((v.re - 1.0 / 8.0).abs() < 1e-14);
            assert!(v.im.abs() < 1e-14);
        }
    }

    #[test]
    fn zero_image_transforms_to_zero() {
        let img = ComplexImage::zeros(8, 8);
        let k = fft2c(&img).unwrap();
        assert!(k.data().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn unitary_norm_preservation() {
        let img = random_image(16, 16, 1);
        let k = fft2c(&img).unwrap();
        assert!((k.norm2() - img.norm2()).abs() / img.norm2() < 1e-12);
    }

    #[test]
    fn round_trip_identity() {
        for (h, w) in [(32, 32), (30, 17), (5, 9)] {
            let img = random_image(h, w, 2 + (h * w) as u64);
            let back = ifft2c(&fft2c(&img).unwrap()).unwrap();
            assert!(rel_err(back.data(), img.data()) < 1e-12, "{}x{}", h, w);
        }
    }

    #[test]
    fn constant_plane_inverse_is_center_impulse() {
        let c = C64::new(0.3, -0.7);
        let img = ComplexImage::from_fn(8, 8, |_, _| c);
        let x = ifft2c(&img).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let expect = if (i, j) == (4, 4) { c * 8.0 } else { C64::new(0.0, 0.0) };
                assert!((x.at(i, j) - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn fft_adjoint_identity() {
        let a = random_image(12, 20, 3);
        let b = random_image(12, 20, 4);
        let lhs = inner(fft2c(&a).unwrap().data(), b.data());
        let rhs = inner(a.data(), ifft2c(&b).unwrap().data());
        assert!((lhs - rhs).norm() < 1e-12 * (1.0 + lhs.norm()));
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut img = ComplexImage::zeros(4, 4);
        img.set(0, 0, C64::new(f64::NAN, 0.0));
        assert!(matches!(fft2c(&img), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn sos_single_coil_is_magnitude() {
        let img = random_image(6, 6, 5);
        let stack = CoilStack::from_planes(&[img.clone()]).unwrap();
        let s = sos(&stack).unwrap();
        for (a, b) in s.data().iter().zip(img.data()) {
            assert!((a.re - b.norm()).abs() < 1e-14);
            assert_eq!(a.im, 0.0);
        }
    }

    #[test]
    fn sos_two_equal_coils_scales_sqrt2() {
        let img = random_image(6, 6, 6);
        let stack = CoilStack::from_planes(&[img.clone(), img.clone()]).unwrap();
        let s = sos(&stack).unwrap();
        for (a, b) in s.data().iter().zip(img.data()) {
            assert!((a.re - 2.0f64.sqrt() * b.norm()).abs() < 1e-13);
        }
    }

    #[test]
    fn sos_matches_scalar_loop_and_phase_invariance() {
        let mut rng = crate::rng::stream(7, "numerics-test", 1);
        let coils = 3;
        let (h, w) = (4, 4);
        let data: Vec<C64> =
            (0..coils * h * w).map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
        let stack = CoilStack::new(coils, h, w, data.clone()).unwrap();
        let s = sos(&stack).unwrap();
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for c in 0..coils {
                    acc += data[c * h * w + i * w + j].norm_sqr();
                }
                assert!((s.at(i, j).re - acc.sqrt()).abs() < 1e-13);
                assert!(s.at(i, j).re >= 0.0);
            }
        }
        // global per-coil phases leave sos unchanged
        let mut rotated = stack.clone();
        for c in 0..coils {
            let phase = C64::from_polar(1.0, 0.4 + c as f64);
            for v in rotated.plane_mut(c) {
                *v *= phase;
            }
        }
        let s2 = sos(&rotated).unwrap();
        assert!(rel_err(s2.data(), s.data()) < 1e-12);
    }
}
