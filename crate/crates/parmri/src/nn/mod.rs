//! Minimal differentiable-operator toolkit: NCHW tensors, a reverse-mode
//! tape over convolution / batch-norm / pooling / thresholding and the
//! complex acquisition operators, Xavier initialization and Adam.
//!
//! Everything is generic over the scalar: `f32` for fast training, `f64` for
//! finite-difference gradient checks.

pub mod convert;
pub mod kernels;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use params::{adam_step, xavier_init, AdamConfig, ParamStore};
pub use scalar::Real;
pub use tape::{MaskBatch, Tape, Var};
pub use tensor::Tensor;

/// Keep large tensor buffers inside the heap arena instead of per-allocation
/// mmaps; the tape holds every intermediate alive, so the default glibc
/// threshold would fault in fresh pages for each op.
pub fn tune_allocator() {
    use std::sync::Once;
    static ONCE: Once = Once::new();
    ONCE.call_once(|| unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    });
}
