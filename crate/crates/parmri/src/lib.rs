//! Parallel MRI reconstruction toolkit.
//!
//! The crate covers the full desk-scale pipeline for sensitivity-encoded
//! Cartesian MRI: centered unitary FFTs and coil algebra, undersampling
//! masks, the SENSE forward/adjoint pair with k-space data consistency,
//! classical reconstructions (CG-SENSE, pFISTA with an orthonormal Haar
//! penalty, joint polynomial sensitivity estimation), a small reverse-mode
//! autodiff kernel, the unrolled joint sensitivity/image network built on it,
//! and a harness with synthetic multi-coil phantoms, quality metrics,
//! container I/O and experiment scenarios.
//!
//! A narrative guide with runnable snippets lives in `book/`; the same
//! snippets are compiled and executed as doctests by the `guide` crate.

pub mod calib;
pub mod config;
pub mod container;
pub mod error;
pub mod jdsi;
pub mod mask;
pub mod metrics;
pub mod nn;
pub mod numerics;
pub mod pgm;
pub mod phantom;
pub mod recon;
pub mod rng;
pub mod scenario;
pub mod sense;
#[cfg(test)]
pub(crate) mod testutil;
pub mod wavelet;

pub use error::{Error, Result};
pub use mask::{make_mask_1d, make_mask_2d, AcsRegion, SamplingMask};
pub use numerics::{fft2c, ifft2c, sos, ComplexImage, CoilStack, C64};
pub use sense::{data_consistency, sense_adjoint, sense_forward, zero_filled, SenseMaps};
