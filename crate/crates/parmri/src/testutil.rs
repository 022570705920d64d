//! Shared fixtures for unit tests.

use crate::numerics::{ComplexImage, CoilStack, C64};
use crate::sense::SenseMaps;
use rand::Rng;

/// Smooth unit-SoS maps covering the whole grid (foreground everywhere).
pub fn smooth_full_maps(coils: usize, h: usize, w: usize, seed: u64) -> SenseMaps {
    let mut rng = crate::rng::stream(seed, "test-maps", 0);
    let mut planes = Vec::new();
    for j in 0..coils {
        let angle = std::f64::consts::TAU * j as f64 / coils as f64;
        let cy = h as f64 * (0.5 + 0.45 * angle.sin());
        let cx = w as f64 * (0.5 + 0.45 * angle.cos());
        let phase_slope: f64 = rng.gen::<f64>() - 0.5;
        planes.push(ComplexImage::from_fn(h, w, |i, jx| {
            let d2 = ((i as f64 - cy) / h as f64).powi(2) + ((jx as f64 - cx) / w as f64).powi(2);
            let mag = (-d2 * 2.0).exp() + 0.05;
            C64::from_polar(mag, phase_slope * (i as f64 + jx as f64) / (h + w) as f64)
        }));
    }
    let stack = CoilStack::from_planes(&planes).unwrap();
    SenseMaps::from_profiles(&stack, 1e-6).unwrap()
}

pub fn random_image(h: usize, w: usize, seed: u64) -> ComplexImage {
    let mut rng = crate::rng::stream(seed, "test-image", 0);
    ComplexImage::from_fn(h, w, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
}

pub fn random_stack(coils: usize, h: usize, w: usize, seed: u64) -> CoilStack {
    let mut rng = crate::rng::stream(seed, "test-stack", 0);
    let data =
        (0..coils * h * w).map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
    CoilStack::new(coils, h, w, data).unwrap()
}
