//! Packing between the classical complex types and 2-channel-per-plane
//! network tensors. Channel layout: coil `j` occupies channels `2j` (real)
//! and `2j+1` (imaginary).

use super::scalar::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::numerics::{ComplexImage, CoilStack, C64};
use crate::sense::SenseMaps;

/// Stack coil k-space/images of several samples into an `(N, 2J, H, W)` tensor.
pub fn stacks_to_tensor<R: Real>(stacks: &[&CoilStack]) -> Result<Tensor<R>> {
    if stacks.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let (j, h, w) = (stacks[0].coils(), stacks[0].height(), stacks[0].width());
    let mut out = Tensor::zeros([stacks.len(), 2 * j, h, w]);
    for (ni, s) in stacks.iter().enumerate() {
        if s.coils() != j || s.height() != h || s.width() != w {
            return Err(Error::ShapeMismatch("batch coil stacks differ".into()));
        }
        for cj in 0..j {
            let plane = s.plane(cj);
            let re = out.plane_mut(ni, 2 * cj);
            for (d, v) in re.iter_mut().zip(plane) {
                *d = R::of(v.re);
            }
            let im = out.plane_mut(ni, 2 * cj + 1);
            for (d, v) in im.iter_mut().zip(plane) {
                *d = R::of(v.im);
            }
        }
    }
    Ok(out)
}

pub fn maps_to_tensor<R: Real>(maps: &[&SenseMaps]) -> Result<Tensor<R>> {
    let stacks: Vec<CoilStack> = maps
        .iter()
        .map(|m| CoilStack::new(m.coils(), m.height(), m.width(), m.data().to_vec()))
        .collect::<Result<_>>()?;
    let refs: Vec<&CoilStack> = stacks.iter().collect();
    stacks_to_tensor(&refs)
}

pub fn images_to_tensor<R: Real>(imgs: &[&ComplexImage]) -> Result<Tensor<R>> {
    if imgs.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let (h, w) = (imgs[0].height(), imgs[0].width());
    let mut out = Tensor::zeros([imgs.len(), 2, h, w]);
    for (ni, img) in imgs.iter().enumerate() {
        if img.height() != h || img.width() != w {
            return Err(Error::ShapeMismatch("batch images differ".into()));
        }
        let re = out.plane_mut(ni, 0);
        for (d, v) in re.iter_mut().zip(img.data()) {
            *d = R::of(v.re);
        }
        let im = out.plane_mut(ni, 1);
        for (d, v) in im.iter_mut().zip(img.data()) {
            *d = R::of(v.im);
        }
    }
    Ok(out)
}

/// Extract batch element `n` of an `(N, 2, H, W)` tensor as a complex image.
pub fn tensor_to_image<R: Real>(t: &Tensor<R>, n: usize) -> Result<ComplexImage> {
    if t.c() != 2 {
        return Err(Error::ShapeMismatch("image tensor needs 2 channels".into()));
    }
    let (h, w) = (t.h(), t.w());
    let re = t.plane(n, 0);
    let im = t.plane(n, 1);
    ComplexImage::new(
        h,
        w,
        re.iter().zip(im).map(|(&a, &b)| C64::new(a.into_f64(), b.into_f64())).collect(),
    )
}

/// Extract batch element `n` of an `(N, 2J, H, W)` tensor as a coil stack.
pub fn tensor_to_stack<R: Real>(t: &Tensor<R>, n: usize) -> Result<CoilStack> {
    if t.c() % 2 != 0 {
        return Err(Error::ShapeMismatch("stack tensor needs channel pairs".into()));
    }
    let coils = t.c() / 2;
    let (h, w) = (t.h(), t.w());
    let mut data = Vec::with_capacity(coils * h * w);
    for j in 0..coils {
        let re = t.plane(n, 2 * j);
        let im = t.plane(n, 2 * j + 1);
        data.extend(re.iter().zip(im).map(|(&a, &b)| C64::new(a.into_f64(), b.into_f64())));
    }
    CoilStack::new(coils, h, w, data)
}

/// Interpret a 2J-channel tensor slice as sensitivity maps. The network
/// keeps maps unit-SoS only to its own precision, so the conversion
/// renormalizes in double precision; pixels with (near-)zero vectors become
/// background.
pub fn tensor_to_maps<R: Real>(t: &Tensor<R>, n: usize) -> Result<SenseMaps> {
    let stack = tensor_to_stack(t, n)?;
    SenseMaps::from_profiles(&stack, 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_image, random_stack, smooth_full_maps};

    #[test]
    fn image_round_trip() {
        let img = random_image(6, 5, 1);
        let t: Tensor<f64> = images_to_tensor(&[&img]).unwrap();
        let back = tensor_to_image(&t, 0).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn stack_round_trip_and_layout() {
        let s = random_stack(3, 4, 4, 2);
        let t: Tensor<f64> = stacks_to_tensor(&[&s, &s]).unwrap();
        assert_eq!(t.shape(), [2, 6, 4, 4]);
        assert_eq!(tensor_to_stack(&t, 1).unwrap(), s);
        // channel 2j holds the real part
        assert_eq!(t.at(0, 2, 0, 0), s.plane(1)[0].re);
        assert_eq!(t.at(0, 3, 0, 0), s.plane(1)[0].im);
    }

    #[test]
    fn maps_round_trip_preserves_unit_sos() {
        let maps = smooth_full_maps(4, 8, 8, 3);
        let t: Tensor<f64> = maps_to_tensor(&[&maps]).unwrap();
        let back = tensor_to_maps(&t, 0).unwrap();
        assert!(crate::numerics::rel_err(back.data(), maps.data()) < 1e-12);
        // the lossy single-precision path renormalizes back to unit SoS
        let t32: Tensor<f32> = maps_to_tensor(&[&maps]).unwrap();
        let back32 = tensor_to_maps(&t32, 0).unwrap();
        assert!(crate::numerics::rel_err(back32.data(), maps.data()) < 1e-6);
    }
}
