//! Model construction and the unrolled forward graph.

use super::config::{JdsiConfig, MapsMode};
use crate::error::{Error, Result};
use crate::mask::SamplingMask;
use crate::nn::convert;
use crate::nn::kernels::{b_shape, bn_batch_stats, BN_EPS, BN_MOMENTUM};
use crate::nn::{xavier_init, MaskBatch, ParamStore, Real, Tape, Tensor, Var};
use crate::numerics::{ComplexImage, CoilStack};
use crate::rng::fnv1a64;
use crate::sense::SenseMaps;
use std::sync::Arc;

/// One training/inference input batch, packed to tensors.
pub struct JdsiBatch<R: Real> {
    /// Measured zero-filled multi-coil k-space, `(N, 2J, H, W)`.
    pub y: Tensor<R>,
    pub mask: Arc<MaskBatch>,
    /// Required when the maps mode is `FrozenExternal`.
    pub external_maps: Option<Tensor<R>>,
}

/// Reference tensors for the loss.
pub struct JdsiRefs<R: Real> {
    /// Fully sampled coil images, `(N, 2J, H, W)`.
    pub coil_images: Tensor<R>,
    /// Ground-truth-combined image, `(N, 2, H, W)`.
    pub combined: Tensor<R>,
    /// Ground-truth maps, `(N, 2J, H, W)`.
    pub maps: Tensor<R>,
}

/// Per-phase graph handles (phase 0 is the initialization output).
#[derive(Debug, Clone, Copy)]
pub struct PhaseOutput {
    pub x: Var,
    pub maps: Var,
}

pub struct JdsiForward {
    /// Zero-filled coil images the initialization sees.
    pub x_u: Var,
    pub phases: Vec<PhaseOutput>,
}

impl JdsiForward {
    pub fn final_phase(&self) -> PhaseOutput {
        *self.phases.last().expect("at least the initialization phase")
    }
}

/// Staged running-statistics updates: `(prefix, new_mean, new_var)`.
pub type BnUpdates<R> = Vec<(String, Tensor<R>, Tensor<R>)>;

pub struct JdsiModel<R: Real> {
    pub cfg: JdsiConfig,
    pub store: ParamStore<R>,
}

const UNET_LEVELS: usize = 4;

struct Ctx<'a, R: Real> {
    tape: &'a mut Tape<R>,
    store: &'a ParamStore<R>,
    train: bool,
    bn_updates: BnUpdates<R>,
}

impl<'a, R: Real> Ctx<'a, R> {
    /// conv -> batch norm -> ReLU block; `bn`/`relu` can be disabled for
    /// linear output layers.
    fn conv_block(&mut self, prefix: &str, x: Var, bn: bool, relu: bool) -> Result<Var> {
        let w = self.tape.param(self.store, &format!("{prefix}.w"))?;
        let b = self.tape.param(self.store, &format!("{prefix}.b"))?;
        let mut cur = self.tape.conv3x3(x, w, b)?;
        if bn {
            let scale = self.tape.param(self.store, &format!("{prefix}.bn_scale"))?;
            let shift = self.tape.param(self.store, &format!("{prefix}.bn_shift"))?;
            let (mean, inv_std) = if self.train {
                let (mean, var, inv_std) = bn_batch_stats(self.tape.value(cur))?;
                let rm = self.store.value(&format!("{prefix}.bn_rmean"))?;
                let rv = self.store.value(&format!("{prefix}.bn_rvar"))?;
                let momentum = R::of(BN_MOMENTUM);
                let blend = R::one() - momentum;
                let mut new_m = rm.clone();
                let mut new_v = rv.clone();
                for (d, &s) in new_m.data_mut().iter_mut().zip(&mean) {
                    *d = *d * momentum + s * blend;
                }
                for (d, &s) in new_v.data_mut().iter_mut().zip(&var) {
                    *d = *d * momentum + s * blend;
                }
                self.bn_updates.push((prefix.to_string(), new_m, new_v));
                (mean, inv_std)
            } else {
                let rm = self.store.value(&format!("{prefix}.bn_rmean"))?;
                let rv = self.store.value(&format!("{prefix}.bn_rvar"))?;
                let eps = R::of(BN_EPS);
                let inv_std: Vec<R> =
                    rv.data().iter().map(|&v| R::one() / (v + eps).sqrt()).collect();
                (rm.data().to_vec(), inv_std)
            };
            cur = self.tape.batchnorm(cur, scale, shift, mean, inv_std, self.train)?;
        }
        if relu {
            cur = self.tape.relu(cur);
        }
        Ok(cur)
    }

    /// Plain convolution chain: `layers-1` conv-BN-ReLU blocks into a final
    /// linear convolution with `out_ch` outputs.
    fn chain(&mut self, prefix: &str, x: Var, layers: usize, out_ch: usize) -> Result<Var> {
        let mut cur = x;
        for l in 0..layers {
            let last = l + 1 == layers;
            cur = self.conv_block(&format!("{prefix}.l{l}"), cur, !last, !last)?;
        }
        let got = self.tape.value(cur).c();
        if got != out_ch {
            return Err(Error::Config(format!("chain {prefix}: ends at {got} channels, expected {out_ch}")));
        }
        Ok(cur)
    }

    /// 4-level encoder-decoder with skip connections: one conv block per
    /// level, max-pool down, nearest-neighbor up, linear output convolution.
    fn unet(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let mut skips = Vec::with_capacity(UNET_LEVELS);
        let mut cur = x;
        for l in 0..UNET_LEVELS {
            cur = self.conv_block(&format!("{prefix}.enc{l}"), cur, true, true)?;
            skips.push(cur);
            cur = self.tape.maxpool2(cur)?;
        }
        cur = self.conv_block(&format!("{prefix}.bot"), cur, true, true)?;
        for l in (0..UNET_LEVELS).rev() {
            cur = self.tape.upsample2(cur);
            cur = self.tape.concat_channels(cur, skips[l])?;
            cur = self.conv_block(&format!("{prefix}.dec{l}"), cur, true, true)?;
        }
        self.conv_block(&format!("{prefix}.out"), cur, false, false)
    }
}

impl<R: Real> JdsiModel<R> {
    pub fn new(cfg: JdsiConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let seed = cfg.seed;
        let ch = 2 * cfg.coils;

        let mut add_conv = |store: &mut ParamStore<R>, name: &str, cin: usize, cout: usize, bn: bool| {
            let wseed = seed ^ fnv1a64(name.as_bytes());
            store.insert(&format!("{name}.w"), xavier_init([cout, cin, 3, 3], wseed), true);
            store.insert(&format!("{name}.b"), Tensor::zeros(b_shape(cout)), true);
            if bn {
                store.insert(&format!("{name}.bn_scale"), Tensor::filled(b_shape(cout), R::one()), true);
                store.insert(&format!("{name}.bn_shift"), Tensor::zeros(b_shape(cout)), true);
                store.insert(&format!("{name}.bn_rmean"), Tensor::zeros(b_shape(cout)), false);
                store
                    .insert(&format!("{name}.bn_rvar"), Tensor::filled(b_shape(cout), R::one()), false);
            }
        };

        let learned_maps = cfg.maps_mode != MapsMode::FrozenExternal;
        if learned_maps {
            // initialization: encoder-decoder + denoiser + extraction net
            let level_ch = |l: usize| (cfg.unet_base << l).min(cfg.unet_max);
            let mut cin = ch;
            for l in 0..UNET_LEVELS {
                add_conv(&mut store, &format!("n.e.enc{l}"), cin, level_ch(l), true);
                cin = level_ch(l);
            }
            add_conv(&mut store, "n.e.bot", level_ch(UNET_LEVELS - 1), level_ch(UNET_LEVELS), true);
            let mut up = level_ch(UNET_LEVELS);
            for l in (0..UNET_LEVELS).rev() {
                add_conv(&mut store, &format!("n.e.dec{l}"), up + level_ch(l), level_ch(l), true);
                up = level_ch(l);
            }
            add_conv(&mut store, "n.e.out", level_ch(0), ch, false);

            chain_params(&mut add_conv, &mut store, "n.d", ch, cfg.d_filters, ch, cfg.d_layers);
            chain_params(&mut add_conv, &mut store, "n.c", 2 * ch, cfg.c_filters, ch, cfg.c_layers);
        }
        if cfg.maps_mode == MapsMode::Learned {
            chain_params(&mut add_conv, &mut store, "s", 2 * ch, cfg.s_filters, ch, cfg.s_layers);
        }
        chain_params(&mut add_conv, &mut store, "i.a", 2, cfg.i_filters, cfg.i_filters, cfg.i_layers);
        chain_params(&mut add_conv, &mut store, "i.b", cfg.i_filters, cfg.i_filters, 2, cfg.i_layers);

        store.insert("gamma", Tensor::scalar(R::of(cfg.gamma_init)), true);
        store.insert("lambda", Tensor::scalar(R::of(cfg.lambda_init)), true);
        for k in 0..cfg.phases {
            store.insert_full(&format!("rho_{k}"), Tensor::scalar(R::of(cfg.rho_init)), true, true);
        }
        Ok(Self { cfg, store })
    }

    /// Record the full unrolled forward pass on `tape`. Returns the phase
    /// handles plus staged batch-norm running-statistic updates (train mode).
    pub fn forward(
        &self,
        tape: &mut Tape<R>,
        batch: &JdsiBatch<R>,
        train: bool,
    ) -> Result<(JdsiForward, BnUpdates<R>)> {
        let cfg = &self.cfg;
        let ch = 2 * cfg.coils;
        if batch.y.c() != ch || batch.y.h() != cfg.height || batch.y.w() != cfg.width {
            return Err(Error::ShapeMismatch(format!(
                "batch {:?} vs configured {}x{}x{}",
                batch.y.shape(),
                ch,
                cfg.height,
                cfg.width
            )));
        }
        let y_arc = Arc::new(batch.y.clone());
        let mut ctx = Ctx { tape, store: &self.store, train, bn_updates: Vec::new() };
        let y = ctx.tape.input(batch.y.clone());
        let y_masked = ctx.tape.apply_mask(y, batch.mask.clone())?;
        let x_u = ctx.tape.ifft2c(y_masked)?;

        // initialization
        let s0 = match cfg.maps_mode {
            MapsMode::Learned | MapsMode::FrozenInit => {
                let se_raw = ctx.unet("n.e", x_u)?;
                let se = ctx.tape.sos_normalize(se_raw);
                let sd = ctx.chain("n.d", se, cfg.d_layers, ch)?;
                let cat = ctx.tape.concat_channels(sd, x_u)?;
                let s0_raw = ctx.chain("n.c", cat, cfg.c_layers, ch)?;
                ctx.tape.sos_normalize(s0_raw)
            }
            MapsMode::FrozenExternal => {
                let ext = batch
                    .external_maps
                    .as_ref()
                    .ok_or_else(|| Error::Config("frozen-external mode needs maps".into()))?;
                ctx.tape.input(ext.clone())
            }
        };
        let x0 = ctx.tape.coil_combine(s0, x_u)?;
        let mut phases = vec![PhaseOutput { x: x0, maps: s0 }];

        let gamma = ctx.tape.param(&self.store, "gamma")?;
        let lambda = ctx.tape.param(&self.store, "lambda")?;
        for k in 1..=cfg.phases {
            let prev = phases[k - 1];
            // sensitivity refinement (full model only)
            let s_k = if cfg.maps_mode == MapsMode::Learned {
                let prod = ctx.tape.coil_expand(prev.maps, prev.x)?;
                let cat = ctx.tape.concat_channels(prev.maps, prod)?;
                let raw = ctx.chain("s", cat, cfg.s_layers, ch)?;
                let res = ctx.tape.add(raw, prev.maps)?;
                ctx.tape.sos_normalize(res)
            } else {
                prev.maps
            };
            let s_grad = if cfg.refreshed_maps_in_grad { s_k } else { prev.maps };

            // data-gradient step x - gamma * E^H (E x - y)
            let ex0 = ctx.tape.coil_expand(s_grad, prev.x)?;
            let ex1 = ctx.tape.fft2c(ex0)?;
            let ex = ctx.tape.apply_mask(ex1, batch.mask.clone())?;
            let resid = ctx.tape.sub(ex, y)?;
            let resid_img = ctx.tape.ifft2c(resid)?;
            let back = ctx.tape.coil_combine(s_grad, resid_img)?;
            let step = ctx.tape.scale_by_scalar(back, gamma)?;
            let g = ctx.tape.sub(prev.x, step)?;

            // thresholding network with residual connection
            let rho = ctx.tape.param(&self.store, &format!("rho_{}", k - 1))?;
            let f1 = ctx.chain("i.a", g, cfg.i_layers, cfg.i_filters)?;
            let th = ctx.tape.softthresh_real(f1, rho)?;
            let f2 = ctx.chain("i.b", th, cfg.i_layers, 2)?;
            let x_tilde = ctx.tape.add(g, f2)?;

            // data consistency
            let ke0 = ctx.tape.coil_expand(s_k, x_tilde)?;
            let ke = ctx.tape.fft2c(ke0)?;
            let kb = ctx.tape.dc_blend(ke, lambda, y_arc.clone(), batch.mask.clone())?;
            let ki = ctx.tape.ifft2c(kb)?;
            let x_k = ctx.tape.coil_combine(s_k, ki)?;
            phases.push(PhaseOutput { x: x_k, maps: s_k });
        }
        let updates = std::mem::take(&mut ctx.bn_updates);
        Ok((JdsiForward { x_u, phases }, updates))
    }

    /// Batch-mean training loss, averaged over the refined phases
    /// `k = 1..K`: per phase a coil-image term plus weighted combined-image
    /// and sensitivity terms. Supervising every phase keeps gradients alive
    /// through the recursion down to the initialization networks.
    pub fn loss(&self, tape: &mut Tape<R>, fwd: &JdsiForward, refs: &JdsiRefs<R>) -> Result<Var> {
        let supervised: Vec<PhaseOutput> = if fwd.phases.len() > 1 {
            fwd.phases[1..].to_vec()
        } else {
            fwd.phases.clone()
        };
        let n = tape.value(supervised[0].x).n();
        let ref_coils = tape.input(refs.coil_images.clone());
        let ref_comb = tape.input(refs.combined.clone());
        let ref_maps = tape.input(refs.maps.clone());
        let mut parts = Vec::with_capacity(3 * supervised.len());
        let phase_weight = 1.0 / supervised.len() as f64;
        for phase in &supervised {
            let pred_coils = tape.coil_expand(phase.maps, phase.x)?;
            let d_coil = tape.sub(ref_coils, pred_coils)?;
            let l_coil = tape.sum_squares(d_coil);
            let d_comb = tape.sub(ref_comb, phase.x)?;
            let l_comb = tape.sum_squares(d_comb);
            let d_maps = tape.sub(ref_maps, phase.maps)?;
            let l_maps = tape.sum_squares(d_maps);
            parts.push((l_coil, R::of(phase_weight)));
            parts.push((l_comb, R::of(self.cfg.alpha1 * phase_weight)));
            parts.push((l_maps, R::of(self.cfg.alpha2 * phase_weight)));
        }
        let total = tape.add_weighted(&parts)?;
        Ok(tape.mul_const(total, R::of(1.0 / n as f64)))
    }

    /// Apply staged batch-norm running statistics.
    pub fn apply_bn_updates(&mut self, updates: BnUpdates<R>) -> Result<()> {
        for (prefix, mean, var) in updates {
            self.store.set_value(&format!("{prefix}.bn_rmean"), mean)?;
            self.store.set_value(&format!("{prefix}.bn_rvar"), var)?;
        }
        Ok(())
    }
}

fn chain_params<R: Real>(
    add_conv: &mut impl FnMut(&mut ParamStore<R>, &str, usize, usize, bool),
    store: &mut ParamStore<R>,
    prefix: &str,
    cin: usize,
    filters: usize,
    cout: usize,
    layers: usize,
) {
    for l in 0..layers {
        let last = l + 1 == layers;
        let ci = if l == 0 { cin } else { filters };
        let co = if last { cout } else { filters };
        add_conv(store, &format!("{prefix}.l{l}"), ci, co, !last);
    }
}

/// Reconstruction output converted back to classical types.
pub struct JdsiRecon {
    pub image: ComplexImage,
    pub maps: SenseMaps,
    /// Per-phase intermediates starting at the initialization.
    pub phases: Vec<(ComplexImage, SenseMaps)>,
}

/// Run the frozen model on one sample (evaluation-mode statistics).
pub fn reconstruct<R: Real>(
    model: &JdsiModel<R>,
    y: &CoilStack,
    mask: &SamplingMask,
    external_maps: Option<&SenseMaps>,
) -> Result<JdsiRecon> {
    let batch = pack_batch(model, &[y], &[mask], external_maps.map(|m| vec![m]).as_deref())?;
    let mut tape = Tape::new();
    let (fwd, _) = model.forward(&mut tape, &batch, false)?;
    let mut phases = Vec::with_capacity(fwd.phases.len());
    for ph in &fwd.phases {
        let img = convert::tensor_to_image(tape.value(ph.x), 0)?;
        let maps = convert::tensor_to_maps(tape.value(ph.maps), 0)?;
        phases.push((img, maps));
    }
    let (image, maps) = phases.last().expect("phases").clone();
    Ok(JdsiRecon { image, maps, phases })
}

/// Pack classical-domain samples into a network batch.
pub fn pack_batch<R: Real>(
    model: &JdsiModel<R>,
    ys: &[&CoilStack],
    masks: &[&SamplingMask],
    external_maps: Option<&[&SenseMaps]>,
) -> Result<JdsiBatch<R>> {
    if ys.len() != masks.len() || ys.is_empty() {
        return Err(Error::ShapeMismatch("batch lists".into()));
    }
    let y = convert::stacks_to_tensor(ys)?;
    let mask = Arc::new(MaskBatch::from_masks(masks)?);
    let external_maps = match external_maps {
        Some(list) => {
            if list.len() != ys.len() {
                return Err(Error::ShapeMismatch("external maps batch".into()));
            }
            Some(convert::maps_to_tensor(list)?)
        }
        None => {
            if model.cfg.maps_mode == MapsMode::FrozenExternal {
                return Err(Error::Config("frozen-external mode needs maps".into()));
            }
            None
        }
    };
    Ok(JdsiBatch { y, mask, external_maps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::make_mask_1d;
    use crate::phantom::{sample_spec, synth_sample};
    use crate::numerics::C64;

    fn toy_cfg() -> JdsiConfig {
        JdsiConfig {
            phases: 2,
            coils: 2,
            height: 32,
            width: 32,
            unet_base: 4,
            unet_max: 16,
            d_layers: 3,
            d_filters: 6,
            c_layers: 2,
            c_filters: 6,
            s_layers: 3,
            s_filters: 6,
            i_layers: 2,
            i_filters: 6,
            seed: 3,
            ..JdsiConfig::desk()
        }
    }

    fn toy_sample(cfg: &JdsiConfig) -> (crate::numerics::ComplexImage, SenseMaps, CoilStack, SamplingMask) {
        let spec = sample_spec(cfg.height, cfg.width, 5, 0, 0.0, false);
        let (truth, maps, kfull) = synth_sample(&spec, cfg.coils).unwrap();
        let mask = make_mask_1d(cfg.width, cfg.height, 2.0, 6, 9).unwrap();
        let mut y = kfull;
        for j in 0..cfg.coils {
            for (p, v) in y.plane_mut(j).iter_mut().enumerate() {
                if !mask.omega()[p] {
                    *v = C64::new(0.0, 0.0);
                }
            }
        }
        (truth, maps, y, mask)
    }

    #[test]
    fn forward_shapes_and_finiteness() {
        let cfg = toy_cfg();
        let model: JdsiModel<f64> = JdsiModel::new(cfg.clone()).unwrap();
        let (_, _, y, mask) = toy_sample(&cfg);
        let batch = pack_batch(&model, &[&y], &[&mask], None).unwrap();
        let mut tape = Tape::new();
        let (fwd, _) = model.forward(&mut tape, &batch, false).unwrap();
        assert_eq!(fwd.phases.len(), cfg.phases + 1);
        for ph in &fwd.phases {
            assert_eq!(tape.value(ph.x).shape(), [1, 2, 32, 32]);
            assert_eq!(tape.value(ph.maps).shape(), [1, 4, 32, 32]);
            assert!(tape.value(ph.x).is_finite());
            assert!(tape.value(ph.maps).is_finite());
        }
    }

    #[test]
    fn phase_maps_satisfy_unit_sos() {
        let cfg = toy_cfg();
        let model: JdsiModel<f64> = JdsiModel::new(cfg.clone()).unwrap();
        let (_, _, y, mask) = toy_sample(&cfg);
        let batch = pack_batch(&model, &[&y], &[&mask], None).unwrap();
        let mut tape = Tape::new();
        let (fwd, _) = model.forward(&mut tape, &batch, false).unwrap();
        for ph in &fwd.phases {
            // conversion enforces the SenseMaps invariant internally
            let maps = convert::tensor_to_maps(tape.value(ph.maps), 0).unwrap();
            assert!(maps.foreground().iter().filter(|&&f| f).count() > 0);
        }
    }

    #[test]
    fn final_phase_kspace_is_pinned_by_large_lambda() {
        let cfg = toy_cfg();
        let model: JdsiModel<f64> = JdsiModel::new(cfg.clone()).unwrap();
        let (_, _, y, mask) = toy_sample(&cfg);
        let rec = reconstruct(&model, &y, &mask, None).unwrap();
        // corrected k-space of the final DC step sits on the measured data
        let kprime = crate::sense::dc_corrected_kspace(
            // the image entering the final DC is not exposed; checking the
            // contract on the returned pair is equivalent up to re-expansion
            &rec.image,
            &rec.maps,
            &y,
            &mask,
            model.store.scalar_value("lambda").unwrap(),
        )
        .unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..cfg.coils {
            for (p, v) in kprime.plane(j).iter().enumerate() {
                if mask.omega()[p] {
                    num += (v - y.plane(j)[p]).norm_sqr();
                    den += y.plane(j)[p].norm_sqr();
                }
            }
        }
        assert!(den > 0.0);
        // the blend pulls any k-space within 1e-6 relative of y on the mask
        let rel = (num / den).sqrt();
        assert!(rel < 2e-6, "pinned k-space rel err {rel}");
    }

    #[test]
    fn single_phase_returns_one_refined_state() {
        let mut cfg = toy_cfg();
        cfg.phases = 1;
        let model: JdsiModel<f64> = JdsiModel::new(cfg.clone()).unwrap();
        let (_, _, y, mask) = toy_sample(&cfg);
        let rec = reconstruct(&model, &y, &mask, None).unwrap();
        assert_eq!(rec.phases.len(), 2);
    }

    #[test]
    fn frozen_external_mode_uses_supplied_maps_and_has_no_map_params() {
        let mut cfg = toy_cfg();
        cfg.maps_mode = MapsMode::FrozenExternal;
        let model: JdsiModel<f64> = JdsiModel::new(cfg.clone()).unwrap();
        assert!(model.store.names().all(|n| !n.starts_with("n.") && !n.starts_with("s.")));
        let (_, maps, y, mask) = toy_sample(&cfg);
        let rec = reconstruct(&model, &y, &mask, Some(&maps)).unwrap();
        for (_, phase_maps) in &rec.phases {
            // equal up to the conversion renormalization
            assert!(crate::numerics::rel_err(phase_maps.data(), maps.data()) < 1e-12);
        }
        // missing maps is an error
        assert!(reconstruct(&model, &y, &mask, None).is_err());
    }

    #[test]
    fn loss_zero_when_predictions_equal_references() {
        let mut cfg = toy_cfg();
        cfg.phases = 1; // single supervised phase: references copied from it
        let model: JdsiModel<f64> = JdsiModel::new(cfg.clone()).unwrap();
        let (_, maps, y, mask) = toy_sample(&cfg);
        let batch = pack_batch(&model, &[&y], &[&mask], None).unwrap();
        let mut tape = Tape::new();
        let (fwd, _) = model.forward(&mut tape, &batch, false).unwrap();
        let last = fwd.final_phase();
        // references copied from the network outputs themselves
        let pred_coils = tape.coil_expand(last.maps, last.x).unwrap();
        let refs = JdsiRefs {
            coil_images: tape.value(pred_coils).clone(),
            combined: tape.value(last.x).clone(),
            maps: tape.value(last.maps).clone(),
        };
        let loss = model.loss(&mut tape, &fwd, &refs).unwrap();
        assert!(tape.value(loss).item().abs() < 1e-12);
        let _ = maps;
    }

    #[test]
    fn loss_alpha_weights_scale_terms() {
        let mut cfg = toy_cfg();
        cfg.phases = 1;
        cfg.alpha1 = 0.0;
        cfg.alpha2 = 0.0;
        let model: JdsiModel<f64> = JdsiModel::new(cfg.clone()).unwrap();
        let (truth, maps, y, mask) = toy_sample(&cfg);
        let batch = pack_batch(&model, &[&y], &[&mask], None).unwrap();
        let mut tape = Tape::new();
        let (fwd, _) = model.forward(&mut tape, &batch, false).unwrap();
        let coil_imgs = maps.expand(&truth).unwrap();
        let refs = JdsiRefs {
            coil_images: convert::stacks_to_tensor(&[&coil_imgs]).unwrap(),
            combined: convert::images_to_tensor(&[&truth]).unwrap(),
            maps: convert::maps_to_tensor(&[&maps]).unwrap(),
        };
        let loss = model.loss(&mut tape, &fwd, &refs).unwrap();
        // with both alphas zero the loss equals the coil term alone
        let last = fwd.final_phase();
        let pred = tape.coil_expand(last.maps, last.x).unwrap();
        let expect: f64 = tape
            .value(pred)
            .data()
            .iter()
            .zip(refs.coil_images.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        assert!((tape.value(loss).item() - expect).abs() < 1e-9 * expect.max(1.0));
    }

    #[test]
    fn loss_matches_scalar_oracle_on_tiny_case() {
        // 2x2 single-coil case evaluated by explicit arithmetic
        let mut cfg = toy_cfg();
        cfg.coils = 1;
        cfg.alpha1 = 0.1;
        cfg.alpha2 = 0.1;
        let model: JdsiModel<f64> = JdsiModel::new(cfg.clone()).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec([1, 2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 0.5, -0.5, 0.25, 0.0]).unwrap());
        let maps = tape.input(Tensor::from_vec([1, 2, 2, 2], vec![0.6, 0.8, 0.0, 0.6, 0.8, 0.0, 1.0, 0.0]).unwrap());
        let fwd = JdsiForward { x_u: x, phases: vec![PhaseOutput { x, maps }] };
        let refs = JdsiRefs {
            coil_images: Tensor::zeros([1, 2, 2, 2]),
            combined: Tensor::zeros([1, 2, 2, 2]),
            maps: Tensor::zeros([1, 2, 2, 2]),
        };
        let loss = model.loss(&mut tape, &fwd, &refs).unwrap();
        // oracle: |S x|^2 + 0.1 |x|^2 + 0.1 |S|^2 with zero references
        let xs = [(1.0, 0.5), (2.0, -0.5), (3.0, 0.25), (4.0, 0.0)];
        let ms = [(0.6, 0.8), (0.8, 0.0), (0.0, 1.0), (0.6, 0.0)];
        let mut oracle = 0.0;
        for q in 0..4 {
            let (xr, xi) = xs[q];
            let (mr, mi) = ms[q];
            let pr = mr * xr - mi * xi;
            let pi = mr * xi + mi * xr;
            oracle += pr * pr + pi * pi + 0.1 * (xr * xr + xi * xi) + 0.1 * (mr * mr + mi * mi);
        }
        assert!(
            (tape.value(loss).item() - oracle).abs() < 1e-12,
            "{} vs {}",
            tape.value(loss).item(),
            oracle
        );
    }
}
