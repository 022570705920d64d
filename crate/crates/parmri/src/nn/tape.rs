//! Reverse-mode tape. A forward pass records one node per operation; the
//! backward sweep walks the tape in reverse, accumulating gradients into
//! every node that needs them (parameters and grad-enabled inputs).

use super::kernels as k;
use super::params::ParamStore;
use super::scalar::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::mask::SamplingMask;
use std::sync::Arc;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Per-batch-element acquisition masks flattened to `n*h*w` booleans.
#[derive(Debug, Clone)]
pub struct MaskBatch {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub omega: Vec<bool>,
}

impl MaskBatch {
    pub fn from_masks(masks: &[&SamplingMask]) -> Result<Self> {
        if masks.is_empty() {
            return Err(Error::InvalidInput("empty mask batch".into()));
        }
        let (h, w) = (masks[0].height(), masks[0].width());
        let mut omega = Vec::with_capacity(masks.len() * h * w);
        for m in masks {
            if m.height() != h || m.width() != w {
                return Err(Error::ShapeMismatch("mask batch dims differ".into()));
            }
            omega.extend_from_slice(m.omega());
        }
        Ok(Self { n: masks.len(), h, w, omega })
    }
}

enum Op<R: Real> {
    Leaf { param: Option<String> },
    Conv3x3 { x: Var, w: Var, b: Var },
    BatchNorm { x: Var, scale: Var, shift: Var, mean: Vec<R>, inv_std: Vec<R>, train: bool },
    Relu { x: Var },
    SoftThreshReal { x: Var, rho: Var },
    SoftThreshComplex { x: Var, rho: Var },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    Upsample2 { x: Var },
    Concat { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    ScaleScalar { x: Var, s: Var },
    MulConst { x: Var, c: R },
    Fft2c { x: Var, inverse: bool },
    ApplyMask { x: Var, mask: Arc<MaskBatch> },
    CoilExpand { maps: Var, img: Var },
    CoilCombine { maps: Var, stack: Var },
    SosNormalize { x: Var },
    DcBlend { kx: Var, lambda: Var, y: Arc<Tensor<R>>, mask: Arc<MaskBatch> },
    SumAll { x: Var },
    SumSquares { x: Var },
    AddWeighted { parts: Vec<(Var, R)> },
}

struct Node<R: Real> {
    value: Tensor<R>,
    grad: Option<Tensor<R>>,
    needs_grad: bool,
    op: Op<R>,
}

/// Recorded forward computation.
pub struct Tape<R: Real> {
    nodes: Vec<Node<R>>,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        super::tune_allocator();
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<R>, needs_grad: bool, op: Op<R>) -> Var {
        self.nodes.push(Node { value, grad: None, needs_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated by the last [`Self::backward`] call, if any.
    pub fn grad(&self, v: Var) -> Option<&Tensor<R>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Constant leaf (no gradient tracked).
    pub fn input(&mut self, value: Tensor<R>) -> Var {
        self.push(value, false, Op::Leaf { param: None })
    }

    /// Leaf whose gradient is wanted (finite-difference checks, map inputs).
    pub fn input_with_grad(&mut self, value: Tensor<R>) -> Var {
        self.push(value, true, Op::Leaf { param: None })
    }

    /// Leaf bound to a named parameter; its gradient lands back in the store
    /// via [`Self::apply_param_grads`].
    pub fn param(&mut self, store: &ParamStore<R>, name: &str) -> Result<Var> {
        let entry = store.get(name)?;
        Ok(self.push(entry.value.clone(), entry.trainable, Op::Leaf { param: Some(name.into()) }))
    }

    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = k::conv3x3_forward(self.value(x), self.value(w), self.value(b))?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, needs, Op::Conv3x3 { x, w, b }))
    }

    /// Batch normalization with caller-supplied statistics: batch statistics
    /// in train mode, running statistics in eval mode.
    pub fn batchnorm(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        mean: Vec<R>,
        inv_std: Vec<R>,
        train: bool,
    ) -> Result<Var> {
        if mean.len() != self.value(x).c() || inv_std.len() != mean.len() {
            return Err(Error::ShapeMismatch("batchnorm statistics length".into()));
        }
        let out = k::bn_apply(self.value(x), self.value(scale), self.value(shift), &mean, &inv_std);
        let needs = self.needs(x) || self.needs(scale) || self.needs(shift);
        Ok(self.push(out, needs, Op::BatchNorm { x, scale, shift, mean, inv_std, train }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = k::relu_forward(self.value(x));
        let needs = self.needs(x);
        self.push(out, needs, Op::Relu { x })
    }

    pub fn softthresh_real(&mut self, x: Var, rho: Var) -> Result<Var> {
        let r = scalar_of(self.value(rho))?;
        let r = if r < R::zero() { R::zero() } else { r };
        let out = k::softthresh_real_forward(self.value(x), r);
        let needs = self.needs(x) || self.needs(rho);
        Ok(self.push(out, needs, Op::SoftThreshReal { x, rho }))
    }

    pub fn softthresh_complex(&mut self, x: Var, rho: Var) -> Result<Var> {
        let r = scalar_of(self.value(rho))?;
        let r = if r < R::zero() { R::zero() } else { r };
        let out = k::softthresh_complex_forward(self.value(x), r)?;
        let needs = self.needs(x) || self.needs(rho);
        Ok(self.push(out, needs, Op::SoftThreshComplex { x, rho }))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = k::maxpool2_forward(self.value(x))?;
        let needs = self.needs(x);
        Ok(self.push(out, needs, Op::MaxPool2 { x, argmax }))
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let out = k::upsample2_forward(self.value(x));
        let needs = self.needs(x);
        self.push(out, needs, Op::Upsample2 { x })
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let [n, ca, h, w] = ta.shape();
        let [nb, cb, hb, wb] = tb.shape();
        if n != nb || h != hb || w != wb {
            return Err(Error::ShapeMismatch("concat spatial dims".into()));
        }
        let mut out = Tensor::zeros([n, ca + cb, h, w]);
        for ni in 0..n {
            for ci in 0..ca {
                out.plane_mut(ni, ci).copy_from_slice(ta.plane(ni, ci));
            }
            for ci in 0..cb {
                out.plane_mut(ni, ca + ci).copy_from_slice(tb.plane(ni, ci));
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, needs, Op::Concat { a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch("add".into()));
        }
        let mut out = ta.clone();
        for (d, s) in out.data_mut().iter_mut().zip(tb.data()) {
            *d = *d + *s;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, needs, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch("sub".into()));
        }
        let mut out = ta.clone();
        for (d, s) in out.data_mut().iter_mut().zip(tb.data()) {
            *d = *d - *s;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, needs, Op::Sub { a, b }))
    }

    pub fn scale_by_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = scalar_of(self.value(s))?;
        let mut out = self.value(x).clone();
        for d in out.data_mut() {
            *d = *d * sv;
        }
        let needs = self.needs(x) || self.needs(s);
        Ok(self.push(out, needs, Op::ScaleScalar { x, s }))
    }

    pub fn mul_const(&mut self, x: Var, c: R) -> Var {
        let mut out = self.value(x).clone();
        for d in out.data_mut() {
            *d = *d * c;
        }
        let needs = self.needs(x);
        self.push(out, needs, Op::MulConst { x, c })
    }

    pub fn fft2c(&mut self, x: Var) -> Result<Var> {
        let out = k::fft2c_tensor(self.value(x), false)?;
        let needs = self.needs(x);
        Ok(self.push(out, needs, Op::Fft2c { x, inverse: false }))
    }

    pub fn ifft2c(&mut self, x: Var) -> Result<Var> {
        let out = k::fft2c_tensor(self.value(x), true)?;
        let needs = self.needs(x);
        Ok(self.push(out, needs, Op::Fft2c { x, inverse: true }))
    }

    pub fn apply_mask(&mut self, x: Var, mask: Arc<MaskBatch>) -> Result<Var> {
        let t = self.value(x);
        if t.n() != mask.n || t.h() != mask.h || t.w() != mask.w {
            return Err(Error::ShapeMismatch("mask batch vs tensor".into()));
        }
        let out = k::apply_mask_tensor(t, &mask.omega);
        let needs = self.needs(x);
        Ok(self.push(out, needs, Op::ApplyMask { x, mask }))
    }

    pub fn coil_expand(&mut self, maps: Var, img: Var) -> Result<Var> {
        let out = k::coil_expand_forward(self.value(maps), self.value(img))?;
        let needs = self.needs(maps) || self.needs(img);
        Ok(self.push(out, needs, Op::CoilExpand { maps, img }))
    }

    pub fn coil_combine(&mut self, maps: Var, stack: Var) -> Result<Var> {
        let out = k::coil_combine_forward(self.value(maps), self.value(stack))?;
        let needs = self.needs(maps) || self.needs(stack);
        Ok(self.push(out, needs, Op::CoilCombine { maps, stack }))
    }

    pub fn sos_normalize(&mut self, x: Var) -> Var {
        let out = k::sos_normalize_forward(self.value(x));
        let needs = self.needs(x);
        self.push(out, needs, Op::SosNormalize { x })
    }

    pub fn dc_blend(
        &mut self,
        kx: Var,
        lambda: Var,
        y: Arc<Tensor<R>>,
        mask: Arc<MaskBatch>,
    ) -> Result<Var> {
        let t = self.value(kx);
        if t.shape() != y.shape() || t.n() != mask.n {
            return Err(Error::ShapeMismatch("dc blend shapes".into()));
        }
        let lam = scalar_of(self.value(lambda))?;
        let out = k::dc_blend_forward(t, &y, &mask.omega, lam);
        let needs = self.needs(kx) || self.needs(lambda);
        Ok(self.push(out, needs, Op::DcBlend { kx, lambda, y, mask }))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: R = self.value(x).data().iter().copied().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), needs, Op::SumAll { x })
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s: R = self.value(x).data().iter().map(|&v| v * v).sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), needs, Op::SumSquares { x })
    }

    /// Weighted sum of scalar nodes.
    pub fn add_weighted(&mut self, parts: &[(Var, R)]) -> Result<Var> {
        let mut acc = R::zero();
        let mut needs = false;
        for &(v, c) in parts {
            acc = acc + scalar_of(self.value(v))? * c;
            needs |= self.needs(v);
        }
        Ok(self.push(Tensor::scalar(acc), needs, Op::AddWeighted { parts: parts.to_vec() }))
    }

    /// Reverse sweep from a scalar loss node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Autodiff("backward on an empty tape".into()));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Autodiff("backward needs a scalar loss".into()));
        }
        for n in self.nodes.iter_mut() {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(R::one()));
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = node.grad.take() else { continue };
            let contributions = backprop_op(&node.op, &g, before);
            node.grad = Some(g);
            for (var, tensor) in contributions {
                if !before[var.0].needs_grad {
                    continue;
                }
                match &mut before[var.0].grad {
                    Some(existing) => {
                        for (d, s) in existing.data_mut().iter_mut().zip(tensor.data()) {
                            *d = *d + *s;
                        }
                    }
                    slot @ None => *slot = Some(tensor),
                }
            }
        }
        Ok(())
    }

    /// Push every parameter-leaf gradient into the store (accumulating).
    pub fn apply_param_grads(&self, store: &mut ParamStore<R>) -> Result<()> {
        for node in &self.nodes {
            if let Op::Leaf { param: Some(name) } = &node.op {
                if let Some(g) = &node.grad {
                    store.accumulate_grad(name, g)?;
                }
            }
        }
        Ok(())
    }
}

fn scalar_of<R: Real>(t: &Tensor<R>) -> Result<R> {
    if !t.is_scalar() {
        return Err(Error::Autodiff("expected a scalar node".into()));
    }
    Ok(t.item())
}

/// Gradient contributions of one op. `before` exposes the values of all
/// earlier nodes (inputs are always earlier on the tape).
fn backprop_op<R: Real>(
    op: &Op<R>,
    g: &Tensor<R>,
    before: &[Node<R>],
) -> Vec<(Var, Tensor<R>)> {
    let val = |v: Var| &before[v.0].value;
    match op {
        Op::Leaf { .. } => Vec::new(),
        Op::Conv3x3 { x, w, b } => {
            let (gx, gw, gb) = k::conv3x3_backward(val(*x), val(*w), g);
            vec![(*x, gx), (*w, gw), (*b, gb)]
        }
        Op::BatchNorm { x, scale, shift, mean, inv_std, train } => {
            let (gx, gscale, gshift) = if *train {
                k::bn_backward_train(val(*x), val(*scale), g, mean, inv_std)
            } else {
                k::bn_backward_eval(val(*x), val(*scale), g, mean, inv_std)
            };
            vec![(*x, gx), (*scale, gscale), (*shift, gshift)]
        }
        Op::Relu { x } => vec![(*x, k::relu_backward(val(*x), g))],
        Op::SoftThreshReal { x, rho } => {
            let r = clamp_rho(val(*rho));
            let (gx, gr) = k::softthresh_real_backward(val(*x), r, g);
            vec![(*x, gx), (*rho, Tensor::scalar(gr))]
        }
        Op::SoftThreshComplex { x, rho } => {
            let r = clamp_rho(val(*rho));
            let (gx, gr) = k::softthresh_complex_backward(val(*x), r, g);
            vec![(*x, gx), (*rho, Tensor::scalar(gr))]
        }
        Op::MaxPool2 { x, argmax } => {
            vec![(*x, k::maxpool2_backward(val(*x).shape(), argmax, g))]
        }
        Op::Upsample2 { x } => vec![(*x, k::upsample2_backward(val(*x).shape(), g))],
        Op::Concat { a, b } => {
            let ta = val(*a);
            let tb = val(*b);
            let n = ta.n();
            let ca = ta.c();
            let cb = tb.c();
            let mut ga = Tensor::zeros(ta.shape());
            let mut gb = Tensor::zeros(tb.shape());
            for ni in 0..n {
                for ci in 0..ca {
                    ga.plane_mut(ni, ci).copy_from_slice(g.plane(ni, ci));
                }
                for ci in 0..cb {
                    gb.plane_mut(ni, ci).copy_from_slice(g.plane(ni, ca + ci));
                }
            }
            vec![(*a, ga), (*b, gb)]
        }
        Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub { a, b } => {
            let mut gb = g.clone();
            for v in gb.data_mut() {
                *v = -*v;
            }
            vec![(*a, g.clone()), (*b, gb)]
        }
        Op::ScaleScalar { x, s } => {
            let sv = val(*s).item();
            let mut gx = g.clone();
            for v in gx.data_mut() {
                *v = *v * sv;
            }
            let gs: R = g.data().iter().zip(val(*x).data()).map(|(&a, &b)| a * b).sum();
            vec![(*x, gx), (*s, Tensor::scalar(gs))]
        }
        Op::MulConst { x, c } => {
            let mut gx = g.clone();
            for v in gx.data_mut() {
                *v = *v * *c;
            }
            vec![(*x, gx)]
        }
        // unitary transform: the adjoint is the opposite direction
        Op::Fft2c { x, inverse } => {
            let gx = k::fft2c_tensor(g, !*inverse).expect("fft grad");
            vec![(*x, gx)]
        }
        Op::ApplyMask { x, mask } => {
            vec![(*x, k::apply_mask_tensor(g, &mask.omega))]
        }
        Op::CoilExpand { maps, img } => {
            let (gm, gi) = k::coil_expand_backward(val(*maps), val(*img), g);
            vec![(*maps, gm), (*img, gi)]
        }
        Op::CoilCombine { maps, stack } => {
            let (gm, gz) = k::coil_combine_backward(val(*maps), val(*stack), g);
            vec![(*maps, gm), (*stack, gz)]
        }
        Op::SosNormalize { x } => vec![(*x, k::sos_normalize_backward(val(*x), g))],
        Op::DcBlend { kx, lambda, y, mask } => {
            let lam = clamp_rho_raw(val(*lambda).item(), R::zero());
            let (gk, gl) = k::dc_blend_backward(val(*kx), y, &mask.omega, lam, g);
            vec![(*kx, gk), (*lambda, Tensor::scalar(gl))]
        }
        Op::SumAll { x } => {
            let gx = Tensor::filled(val(*x).shape(), g.item());
            vec![(*x, gx)]
        }
        Op::SumSquares { x } => {
            let two_g = g.item() + g.item();
            let mut gx = val(*x).clone();
            for v in gx.data_mut() {
                *v = *v * two_g;
            }
            vec![(*x, gx)]
        }
        Op::AddWeighted { parts } => {
            parts.iter().map(|&(v, c)| (v, Tensor::scalar(g.item() * c))).collect()
        }
    }
}

fn clamp_rho<R: Real>(t: &Tensor<R>) -> R {
    clamp_rho_raw(t.item(), R::zero())
}

fn clamp_rho_raw<R: Real>(v: R, floor: R) -> R {
    if v < floor {
        floor
    } else {
        v
    }
}
