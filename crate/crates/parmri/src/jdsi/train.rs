//! Adam training over the unrolled network with epoch-shuffled batches,
//! per-epoch validation metrics and checkpointing.

use super::config::MapsMode;
use super::model::{JdsiBatch, JdsiModel, JdsiRefs};
use crate::container::container_write;
use crate::error::{Error, Result};
use crate::mask::SamplingMask;
use crate::metrics;
use crate::nn::convert;
use crate::nn::{adam_step, AdamConfig, MaskBatch, Real, Tape, Tensor};
use crate::numerics::CoilStack;
use crate::rng;
use crate::sense::SenseMaps;
use rand::seq::SliceRandom;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// One dataset entry in classical types. `reference_coils` are the fully
/// sampled coil images; `reference_maps` the ground-truth maps.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub y: CoilStack,
    pub mask: SamplingMask,
    pub reference_coils: CoilStack,
    pub reference_maps: SenseMaps,
    /// Pre-estimated maps for the frozen-external ablation.
    pub external_maps: Option<SenseMaps>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_rlne: Option<f64>,
    pub val_psnr: Option<f64>,
    pub val_ssim: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss,val_loss,val_rlne,val_psnr,val_ssim\n");
        for r in &self.records {
            let fmt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{:.17e},{:.17e},{},{},{},{}\n",
                r.epoch,
                r.lr,
                r.train_loss,
                fmt(r.val_loss),
                fmt(r.val_rlne),
                fmt(r.val_psnr),
                fmt(r.val_ssim),
            ));
        }
        out
    }
}

struct Packed<R: Real> {
    y: Tensor<R>,
    mask: Arc<MaskBatch>,
    refs: JdsiRefs<R>,
    external: Option<Tensor<R>>,
}

fn pack_sample<R: Real>(sample: &TrainSample, frozen_external: bool) -> Result<Packed<R>> {
    let y = convert::stacks_to_tensor(&[&sample.y])?;
    let mask = Arc::new(MaskBatch::from_masks(&[&sample.mask])?);
    let combined = sample.reference_maps.combine(&sample.reference_coils)?;
    let refs = JdsiRefs {
        coil_images: convert::stacks_to_tensor(&[&sample.reference_coils])?,
        combined: convert::images_to_tensor(&[&combined])?,
        maps: convert::maps_to_tensor(&[&sample.reference_maps])?,
    };
    let external = match (&sample.external_maps, frozen_external) {
        (Some(m), _) => Some(convert::maps_to_tensor(&[m])?),
        (None, true) => {
            return Err(Error::Config("frozen-external training needs external maps".into()))
        }
        (None, false) => None,
    };
    Ok(Packed { y, mask, refs, external })
}

fn assemble_batch<R: Real>(packed: &[&Packed<R>]) -> (JdsiBatch<R>, JdsiRefs<R>) {
    let cat = |get: &dyn Fn(&Packed<R>) -> &Tensor<R>| -> Tensor<R> {
        let shape = get(packed[0]).shape();
        let mut out = Tensor::zeros([packed.len(), shape[1], shape[2], shape[3]]);
        for (ni, p) in packed.iter().enumerate() {
            let src = get(p);
            for c in 0..shape[1] {
                out.plane_mut(ni, c).copy_from_slice(src.plane(0, c));
            }
        }
        out
    };
    let y = cat(&|p| &p.y);
    let mask = Arc::new(MaskBatch {
        n: packed.len(),
        h: packed[0].mask.h,
        w: packed[0].mask.w,
        omega: packed.iter().flat_map(|p| p.mask.omega.iter().copied()).collect(),
    });
    let external = if packed[0].external.is_some() {
        Some(cat(&|p| p.external.as_ref().expect("uniform batches")))
    } else {
        None
    };
    let refs = JdsiRefs {
        coil_images: cat(&|p| &p.refs.coil_images),
        combined: cat(&|p| &p.refs.combined),
        maps: cat(&|p| &p.refs.maps),
    };
    (JdsiBatch { y, mask, external_maps: external }, refs)
}

/// Forward/backward on one batch; returns the loss value.
fn train_step<R: Real>(
    model: &mut JdsiModel<R>,
    batch: &JdsiBatch<R>,
    refs: &JdsiRefs<R>,
    lr: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let (fwd, bn_updates) = model.forward(&mut tape, batch, true)?;
    let loss = model.loss(&mut tape, &fwd, refs)?;
    let loss_val = tape.value(loss).item().into_f64();
    if !loss_val.is_finite() {
        return Err(Error::Training(format!("non-finite loss {loss_val}")));
    }
    tape.backward(loss)?;
    model.store.zero_grads();
    tape.apply_param_grads(&mut model.store)?;
    adam_step(&mut model.store, lr, AdamConfig::default());
    model.apply_bn_updates(bn_updates)?;
    Ok(loss_val)
}

/// Evaluate loss and magnitude metrics (against the combined reference) on a
/// held-out set.
pub fn evaluate<R: Real>(
    model: &JdsiModel<R>,
    samples: &[TrainSample],
) -> Result<(f64, f64, f64, f64)> {
    let frozen_external = model.cfg.maps_mode == MapsMode::FrozenExternal;
    let mut loss_acc = 0.0;
    let mut rlne_acc = 0.0;
    let mut psnr_acc = 0.0;
    let mut ssim_acc = 0.0;
    for sample in samples {
        let packed: Packed<R> = pack_sample(sample, frozen_external)?;
        let (batch, refs) = assemble_batch(&[&packed]);
        let mut tape = Tape::new();
        let (fwd, _) = model.forward(&mut tape, &batch, false)?;
        let loss = model.loss(&mut tape, &fwd, &refs)?;
        loss_acc += tape.value(loss).item().into_f64();
        let rec = convert::tensor_to_image(tape.value(fwd.final_phase().x), 0)?;
        let reference = convert::tensor_to_image(&refs.combined, 0)?;
        rlne_acc += metrics::rlne(&rec, &reference)?;
        psnr_acc += metrics::psnr(&rec, &reference)?;
        ssim_acc += metrics::ssim(&rec, &reference)?;
    }
    let n = samples.len().max(1) as f64;
    Ok((loss_acc / n, rlne_acc / n, psnr_acc / n, ssim_acc / n))
}

/// Train with Adam and the exponential learning-rate schedule
/// `lr_e = lr * decay^e`. Batches are drawn from a seeded per-epoch shuffle.
/// A non-finite loss aborts, restoring the last end-of-epoch state (written
/// to `<dir>/last_good.jks` when a checkpoint directory is given).
pub fn train<R: Real>(
    model: &mut JdsiModel<R>,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    checkpoint_dir: Option<&Path>,
) -> Result<TrainHistory> {
    if train_set.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let frozen_external = model.cfg.maps_mode == MapsMode::FrozenExternal;
    let packed: Vec<Packed<R>> =
        train_set.iter().map(|s| pack_sample(s, frozen_external)).collect::<Result<_>>()?;
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut history = TrainHistory::default();
    let mut last_good = model.store.clone();
    for epoch in 0..model.cfg.epochs {
        let lr = model.cfg.lr * model.cfg.lr_decay.powi(epoch as i32);
        let mut order: Vec<usize> = (0..packed.len()).collect();
        order.shuffle(&mut rng::stream(model.cfg.seed, "shuffle", epoch as u64));

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(model.cfg.batch) {
            let group: Vec<&Packed<R>> = chunk.iter().map(|&i| &packed[i]).collect();
            let (batch, refs) = assemble_batch(&group);
            match train_step(model, &batch, &refs, lr) {
                Ok(loss) => {
                    loss_sum += loss * chunk.len() as f64;
                    seen += chunk.len();
                }
                Err(Error::Training(msg)) => {
                    model.store = last_good;
                    let mut note = format!("epoch {epoch}: {msg}; restored last good state");
                    if let Some(dir) = checkpoint_dir {
                        let path = dir.join("last_good.jks");
                        container_write(&path, &model.store.to_records())?;
                        note.push_str(&format!(" ({})", path.display()));
                    }
                    return Err(Error::Training(note));
                }
                Err(e) => return Err(e),
            }
        }
        let train_loss = loss_sum / seen.max(1) as f64;
        let (val_loss, val_rlne, val_psnr, val_ssim) = if val_set.is_empty() {
            (None, None, None, None)
        } else {
            let (l, r, p, s) = evaluate(model, val_set)?;
            (Some(l), Some(r), Some(p), Some(s))
        };
        history.records.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_rlne,
            val_psnr,
            val_ssim,
        });
        if std::env::var_os("PARMRI_TRAIN_LOG").is_some() {
            eprintln!(
                "epoch {epoch:3}: lr {lr:.6} loss {train_loss:.4} val_rlne {} val_psnr {}",
                val_rlne.map(|v| format!("{v:.4}")).unwrap_or_default(),
                val_psnr.map(|v| format!("{v:.2}")).unwrap_or_default()
            );
        }
        last_good = model.store.clone();
        if let Some(dir) = checkpoint_dir {
            write_checkpoint(&dir.join(format!("epoch_{epoch:03}.jks")), model)?;
        }
    }
    if let Some(dir) = checkpoint_dir {
        write_checkpoint(&dir.join("final.jks"), model)?;
    }
    Ok(history)
}

pub fn write_checkpoint<R: Real>(path: &PathBuf, model: &JdsiModel<R>) -> Result<()> {
    container_write(path, &model.store.to_records())
}

pub fn load_checkpoint<R: Real>(path: &Path, model: &mut JdsiModel<R>) -> Result<()> {
    let records = crate::container::container_read(path)?;
    model.store.load_records(&records)
}
