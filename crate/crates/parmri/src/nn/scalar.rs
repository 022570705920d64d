//! Scalar abstraction for the network path.

use crate::numerics::FftScalar;
use std::cell::RefCell;
use std::collections::HashMap;

/// Real scalar the tape can run on. The classical reconstruction path is
/// fixed to `f64`; the network trains in `f32` and is gradient-checked in
/// `f64`.
pub trait Real:
    FftScalar + Send + Sync + Default + std::fmt::Display + std::iter::Sum + 'static
{
    fn of(v: f64) -> Self;
    fn into_f64(self) -> f64;
    /// True for the double-precision instantiation (drives checkpoint dtype).
    fn is_f64() -> bool;
    /// Thread-local buffer recycling; a tape retains every activation, so
    /// without reuse each step faults in fresh pages for the whole graph.
    fn pool_take(len: usize) -> Option<Vec<Self>>;
    fn pool_give(buf: Vec<Self>);
}

/// Buffers below this length are not worth pooling.
const POOL_MIN_LEN: usize = 1024;
/// Cap per thread across all size classes.
const POOL_MAX_BUFFERS: usize = 4096;

struct Pool<T> {
    by_len: HashMap<usize, Vec<Vec<T>>>,
    held: usize,
}

impl<T> Pool<T> {
    fn new() -> Self {
        Self { by_len: HashMap::new(), held: 0 }
    }

    fn take(&mut self, len: usize) -> Option<Vec<T>> {
        let list = self.by_len.get_mut(&len)?;
        let buf = list.pop()?;
        self.held -= 1;
        Some(buf)
    }

    fn give(&mut self, buf: Vec<T>) {
        if buf.capacity() < POOL_MIN_LEN || self.held >= POOL_MAX_BUFFERS {
            return;
        }
        self.held += 1;
        self.by_len.entry(buf.capacity()).or_default().push(buf);
    }
}

thread_local! {
    static POOL_F32: RefCell<Pool<f32>> = RefCell::new(Pool::new());
    static POOL_F64: RefCell<Pool<f64>> = RefCell::new(Pool::new());
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn into_f64(self) -> f64 {
        self as f64
    }
    fn is_f64() -> bool {
        false
    }
    fn pool_take(len: usize) -> Option<Vec<Self>> {
        POOL_F32.with(|p| p.borrow_mut().take(len))
    }
    fn pool_give(buf: Vec<Self>) {
        POOL_F32.with(|p| p.borrow_mut().give(buf))
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn into_f64(self) -> f64 {
        self
    }
    fn is_f64() -> bool {
        true
    }
    fn pool_take(len: usize) -> Option<Vec<Self>> {
        POOL_F64.with(|p| p.borrow_mut().take(len))
    }
    fn pool_give(buf: Vec<Self>) {
        POOL_F64.with(|p| p.borrow_mut().give(buf))
    }
}
