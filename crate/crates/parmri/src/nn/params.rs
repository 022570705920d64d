//! Named parameters with Adam state, Xavier initialization, and checkpoint
//! records.

use super::scalar::Real;
use super::tensor::Tensor;
use crate::container::{Record, RecordData, RecordKind};
use crate::error::{Error, Result};
use rand::Rng;
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct ParamEntry<R: Real> {
    pub value: Tensor<R>,
    pub grad: Tensor<R>,
    pub m: Tensor<R>,
    pub v: Tensor<R>,
    pub t: u64,
    pub trainable: bool,
    /// Clamped at zero after every optimizer step (soft-threshold levels).
    pub non_negative: bool,
}

/// Named parameter store. Iteration order is the name order (BTreeMap), so
/// optimizer sweeps are deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<R: Real> {
    entries: BTreeMap<String, ParamEntry<R>>,
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<R>, trainable: bool) {
        self.insert_full(name, value, trainable, false)
    }

    pub fn insert_full(&mut self, name: &str, value: Tensor<R>, trainable: bool, non_negative: bool) {
        let shape = value.shape();
        self.entries.insert(
            name.to_string(),
            ParamEntry {
                value,
                grad: Tensor::zeros(shape),
                m: Tensor::zeros(shape),
                v: Tensor::zeros(shape),
                t: 0,
                trainable,
                non_negative,
            },
        );
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry<R>> {
        self.entries.get(name).ok_or_else(|| Error::Autodiff(format!("unknown parameter '{name}'")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<R>> {
        Ok(&self.get(name)?.value)
    }

    pub fn scalar_value(&self, name: &str) -> Result<R> {
        let t = self.value(name)?;
        if !t.is_scalar() {
            return Err(Error::Autodiff(format!("parameter '{name}' is not a scalar")));
        }
        Ok(t.item())
    }

    pub fn set_value(&mut self, name: &str, value: Tensor<R>) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Autodiff(format!("unknown parameter '{name}'")))?;
        if entry.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch(format!("set_value '{name}'")));
        }
        entry.value = value;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn trainable_count(&self) -> usize {
        self.entries.values().filter(|e| e.trainable).map(|e| e.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().fill(R::zero());
        }
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor<R>) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Autodiff(format!("unknown parameter '{name}'")))?;
        if entry.grad.shape() != grad.shape() {
            return Err(Error::ShapeMismatch(format!("gradient for '{name}'")));
        }
        for (d, s) in entry.grad.data_mut().iter_mut().zip(grad.data()) {
            *d = *d + *s;
        }
        Ok(())
    }

    /// Serialize every parameter (plus Adam state) as container records.
    pub fn to_records(&self) -> Vec<Record> {
        let mut records = Vec::new();
        for (name, e) in &self.entries {
            let dims = e.value.shape().map(|d| d as u32);
            records.push(Record {
                kind: RecordKind::Param,
                name: name.clone(),
                dims,
                data: tensor_data(&e.value),
            });
            records.push(Record {
                kind: RecordKind::AdamState,
                name: format!("{name}.adam_m"),
                dims,
                data: tensor_data(&e.m),
            });
            records.push(Record {
                kind: RecordKind::AdamState,
                name: format!("{name}.adam_v"),
                dims,
                data: tensor_data(&e.v),
            });
            records.push(Record {
                kind: RecordKind::AdamState,
                name: format!("{name}.adam_t"),
                dims: [1, 1, 1, 1],
                data: RecordData::F64(vec![e.t as f64]),
            });
        }
        records
    }

    /// Load values and Adam state from checkpoint records; every store entry
    /// must be present with a matching shape.
    pub fn load_records(&mut self, records: &[Record]) -> Result<()> {
        let by_name: BTreeMap<&str, &Record> =
            records.iter().map(|r| (r.name.as_str(), r)).collect();
        for (name, e) in self.entries.iter_mut() {
            let rec = by_name
                .get(name.as_str())
                .ok_or_else(|| Error::InvalidInput(format!("checkpoint misses '{name}'")))?;
            e.value = tensor_from(rec, e.value.shape())?;
            if let Some(m) = by_name.get(format!("{name}.adam_m").as_str()) {
                e.m = tensor_from(m, e.value.shape())?;
            }
            if let Some(v) = by_name.get(format!("{name}.adam_v").as_str()) {
                e.v = tensor_from(v, e.value.shape())?;
            }
            if let Some(t) = by_name.get(format!("{name}.adam_t").as_str()) {
                match &t.data {
                    RecordData::F64(v) if v.len() == 1 => e.t = v[0] as u64,
                    _ => return Err(Error::InvalidInput(format!("bad adam_t for '{name}'"))),
                }
            }
        }
        Ok(())
    }
}

fn tensor_data<R: Real>(t: &Tensor<R>) -> RecordData {
    if R::is_f64() {
        RecordData::F64(t.data().iter().map(|v| v.into_f64()).collect())
    } else {
        RecordData::F32(t.data().iter().map(|v| v.into_f64() as f32).collect())
    }
}

fn tensor_from<R: Real>(rec: &Record, shape: [usize; 4]) -> Result<Tensor<R>> {
    let data: Vec<R> = match &rec.data {
        RecordData::F32(v) => v.iter().map(|&x| R::of(x as f64)).collect(),
        RecordData::F64(v) => v.iter().map(|&x| R::of(x)).collect(),
        _ => return Err(Error::InvalidInput(format!("record '{}' has non-float payload", rec.name))),
    };
    let t = Tensor::from_vec(shape, data)?;
    Ok(t)
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One Adam update over every trainable parameter, with bias correction.
pub fn adam_step<R: Real>(store: &mut ParamStore<R>, lr: f64, cfg: AdamConfig) {
    let b1 = R::of(cfg.beta1);
    let b2 = R::of(cfg.beta2);
    let eps = R::of(cfg.eps);
    for e in store.entries.values_mut() {
        if !e.trainable {
            continue;
        }
        e.t += 1;
        let bias1 = R::of(1.0 - cfg.beta1.powi(e.t as i32));
        let bias2 = R::of(1.0 - cfg.beta2.powi(e.t as i32));
        let step = R::of(lr);
        for i in 0..e.value.numel() {
            let g = e.grad.data()[i];
            let m = b1 * e.m.data()[i] + (R::one() - b1) * g;
            let v = b2 * e.v.data()[i] + (R::one() - b2) * g * g;
            e.m.data_mut()[i] = m;
            e.v.data_mut()[i] = v;
            let mhat = m / bias1;
            let vhat = v / bias2;
            let mut p = e.value.data()[i] - step * mhat / (vhat.sqrt() + eps);
            if e.non_negative && p < R::zero() {
                p = R::zero();
            }
            e.value.data_mut()[i] = p;
        }
    }
}

/// Xavier/Glorot uniform initialization: samples in
/// `+-sqrt(6 / (fan_in + fan_out))`, deterministic per seed. Convolution
/// shapes `[co, ci, kh, kw]` use `fan_in = ci*kh*kw`, `fan_out = co*kh*kw`.
pub fn xavier_init<R: Real>(shape: [usize; 4], seed: u64) -> Tensor<R> {
    let (fan_in, fan_out) = xavier_fans(shape);
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = crate::rng::stream(seed, "xavier", 0);
    let data = (0..shape.iter().product::<usize>())
        .map(|_| R::of((rng.gen::<f64>() * 2.0 - 1.0) * bound))
        .collect();
    Tensor::from_vec(shape, data).expect("sized by construction")
}

pub fn xavier_fans(shape: [usize; 4]) -> (usize, usize) {
    let [co, ci, kh, kw] = shape;
    (ci * kh * kw, co * kh * kw)
}
