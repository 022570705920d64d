//! Dense NCHW tensors backed by recycled buffers.

use super::scalar::Real;
use crate::error::{Error, Result};

#[derive(Debug)]
pub struct Tensor<R: Real> {
    shape: [usize; 4],
    data: Vec<R>,
}

impl<R: Real> Clone for Tensor<R> {
    fn clone(&self) -> Self {
        let mut data = Self::alloc_uninit(self.data.len());
        data.extend_from_slice(&self.data);
        Self { shape: self.shape, data }
    }
}

impl<R: Real> Drop for Tensor<R> {
    fn drop(&mut self) {
        R::pool_give(std::mem::take(&mut self.data));
    }
}

impl<R: Real> PartialEq for Tensor<R> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl<R: Real> Tensor<R> {
    fn alloc_uninit(len: usize) -> Vec<R> {
        match R::pool_take(len) {
            Some(mut buf) => {
                buf.clear();
                buf
            }
            None => Vec::with_capacity(len),
        }
    }

    fn alloc_filled(len: usize, v: R) -> Vec<R> {
        let mut buf = Self::alloc_uninit(len);
        buf.resize(len, v);
        buf
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        let n = shape.iter().product();
        Self { shape, data: Self::alloc_filled(n, R::zero()) }
    }

    pub fn filled(shape: [usize; 4], v: R) -> Self {
        let n = shape.iter().product();
        Self { shape, data: Self::alloc_filled(n, v) }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<R>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!(
                "tensor data length {} vs shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: R) -> Self {
        Self { shape: [1, 1, 1, 1], data: vec![v] }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    pub fn n(&self) -> usize {
        self.shape[0]
    }
    pub fn c(&self) -> usize {
        self.shape[1]
    }
    pub fn h(&self) -> usize {
        self.shape[2]
    }
    pub fn w(&self) -> usize {
        self.shape[3]
    }
    pub fn numel(&self) -> usize {
        self.data.len()
    }
    pub fn data(&self) -> &[R] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> R {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn plane(&self, n: usize, c: usize) -> &[R] {
        let hw = self.shape[2] * self.shape[3];
        let at = (n * self.shape[1] + c) * hw;
        &self.data[at..at + hw]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [R] {
        let hw = self.shape[2] * self.shape[3];
        let at = (n * self.shape[1] + c) * hw;
        &mut self.data[at..at + hw]
    }

    pub fn at(&self, n: usize, c: usize, i: usize, j: usize) -> R {
        self.data[((n * self.shape[1] + c) * self.shape[2] + i) * self.shape[3] + j]
    }

    pub fn set(&mut self, n: usize, c: usize, i: usize, j: usize, v: R) {
        self.data[((n * self.shape[1] + c) * self.shape[2] + i) * self.shape[3] + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Cast elementwise to another precision.
    pub fn cast<T: Real>(&self) -> Tensor<T> {
        Tensor { shape: self.shape, data: self.data.iter().map(|v| T::of(v.into_f64())).collect() }
    }
}
