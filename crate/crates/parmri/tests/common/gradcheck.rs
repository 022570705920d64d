//! Shared central-difference gradient-check harness.

use parmri::jdsi::{pack_batch, JdsiConfig, JdsiModel, JdsiRefs};
use parmri::mask::make_mask_1d;
use parmri::nn::{Tape, Tensor, Var};
use parmri::numerics::C64;
use parmri::phantom::{sample_spec, synth_sample};
use rand::Rng;

pub const OP_TOL: f64 = 1e-5;
pub const E2E_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> impl Rng {
    parmri::rng::stream(seed, "gradcheck", 0)
}

pub fn rand_tensor(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let n = shape.iter().product::<usize>();
    Tensor::from_vec(shape, (0..n).map(|_| r.gen::<f64>() * 2.0 - 1.0).collect()).unwrap()
}

pub type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Var;

/// `sum((out + probe)^2)` — the probe offset keeps the loss sensitive even
/// for outputs with invariants (unit pixel norms, fixed batch statistics).
fn scalar_loss(inputs: &[Tensor<f64>], build: &Build, probe: &Tensor<f64>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input_with_grad(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let pv = tape.input(probe.clone());
    let shifted = tape.add(out, pv).unwrap();
    let loss = tape.sum_squares(shifted);
    tape.value(loss).item()
}

pub fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-10)
}

/// Analytic tape gradients vs. central differences for every input.
pub fn check_op(name: &str, inputs: &[Tensor<f64>], build: &Build) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input_with_grad(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let probe = rand_tensor(tape.value(out).shape(), 0x9e37 ^ name.len() as u64);
    let pv = tape.input(probe.clone());
    let shifted = tape.add(out, pv).unwrap();
    let loss = tape.sum_squares(shifted);
    tape.backward(loss).unwrap();
    for (slot, (var, input)) in vars.iter().zip(inputs).enumerate() {
        let analytic = tape
            .grad(*var)
            .unwrap_or_else(|| panic!("{name}: input {slot} received no gradient"))
            .data()
            .to_vec();
        let mut numeric = vec![0.0; input.numel()];
        for e in 0..input.numel() {
            let h = 1e-6 * input.data()[e].abs().max(1.0);
            let mut plus = inputs.to_vec();
            plus[slot].data_mut()[e] += h;
            let mut minus = inputs.to_vec();
            minus[slot].data_mut()[e] -= h;
            numeric[e] =
                (scalar_loss(&plus, build, &probe) - scalar_loss(&minus, build, &probe)) / (2.0 * h);
        }
        let gap = relative_gap(&analytic, &numeric);
        assert!(gap < OP_TOL, "{name}: input {slot} gradient gap {gap:.3e}");
    }
}

/// End-to-end check: loss gradients of the full unrolled network versus
/// central differences for 20 sampled parameters including the learnable
/// step size, thresholds and consistency weight.
pub fn check_end_to_end() {
    let cfg = JdsiConfig {
        phases: 2,
        coils: 2,
        height: 32,
        width: 32,
        unet_base: 3,
        unet_max: 12,
        d_layers: 2,
        d_filters: 5,
        c_layers: 2,
        c_filters: 5,
        s_layers: 2,
        s_filters: 5,
        i_layers: 2,
        i_filters: 5,
        seed: 33,
        // keep the consistency weight in a finite-difference-friendly range
        lambda_init: 5.0,
        rho_init: 0.2,
        ..JdsiConfig::desk()
    };
    let mut model: JdsiModel<f64> = JdsiModel::new(cfg.clone()).unwrap();
    // residual final layers start at zero; nudge them so the check covers
    // non-trivial gradients through every branch
    let names: Vec<String> = model.store.names().cloned().collect();
    for name in &names {
        if name.ends_with(".w") {
            let current = model.store.value(name).unwrap();
            if current.data().iter().all(|&v| v == 0.0) {
                let jitter = parmri::nn::xavier_init::<f64>(current.shape(), 777);
                model.store.set_value(name, jitter).unwrap();
            }
        }
    }

    let spec = sample_spec(cfg.height, cfg.width, 55, 0, 0.0, false);
    let (truth, maps, kfull) = synth_sample(&spec, cfg.coils).unwrap();
    let mask = make_mask_1d(cfg.width, cfg.height, 2.0, 6, 77).unwrap();
    let mut y = kfull;
    for j in 0..cfg.coils {
        for (p, v) in y.plane_mut(j).iter_mut().enumerate() {
            if !mask.omega()[p] {
                *v = C64::new(0.0, 0.0);
            }
        }
    }
    let batch = pack_batch(&model, &[&y], &[&mask], None).unwrap();
    let coil_imgs = maps.expand(&truth).unwrap();
    let combined = maps.combine(&coil_imgs).unwrap();
    let refs = JdsiRefs {
        coil_images: parmri::nn::convert::stacks_to_tensor(&[&coil_imgs]).unwrap(),
        combined: parmri::nn::convert::images_to_tensor(&[&combined]).unwrap(),
        maps: parmri::nn::convert::maps_to_tensor(&[&maps]).unwrap(),
    };

    let loss_of = |model: &JdsiModel<f64>| -> f64 {
        let mut tape = Tape::new();
        let (fwd, _) = model.forward(&mut tape, &batch, true).unwrap();
        let loss = model.loss(&mut tape, &fwd, &refs).unwrap();
        tape.value(loss).item()
    };

    let mut tape = Tape::new();
    let (fwd, _) = model.forward(&mut tape, &batch, true).unwrap();
    let loss = model.loss(&mut tape, &fwd, &refs).unwrap();
    tape.backward(loss).unwrap();
    let mut grads = model.store.clone();
    grads.zero_grads();
    tape.apply_param_grads(&mut grads).unwrap();

    // sampled parameter coordinates: all scalars plus spread tensor entries;
    // biases feeding train-mode batch norm are excluded (exactly zero grad)
    let mut targets: Vec<(String, usize)> =
        vec![("gamma".into(), 0), ("lambda".into(), 0), ("rho_0".into(), 0), ("rho_1".into(), 0)];
    let mut r = rng(99);
    let names: Vec<String> = model
        .store
        .names()
        .filter(|n| n.ends_with(".w") || n.ends_with(".bn_scale") || n.ends_with(".bn_shift"))
        .cloned()
        .collect();
    while targets.len() < 20 {
        let name = names[r.gen_range(0..names.len())].clone();
        let numel = model.store.value(&name).unwrap().numel();
        targets.push((name, r.gen_range(0..numel)));
    }

    let mut checked = 0;
    for (name, idx) in targets {
        let base = model.store.value(&name).unwrap().data()[idx];
        let h = 1e-6 * base.abs().max(1.0);
        let mut m = JdsiModel { cfg: cfg.clone(), store: model.store.clone() };
        let eval = |value: f64, m: &mut JdsiModel<f64>| -> f64 {
            let mut t = m.store.value(&name).unwrap().clone();
            t.data_mut()[idx] = value;
            m.store.set_value(&name, t).unwrap();
            loss_of(m)
        };
        let fp = eval(base + h, &mut m);
        let fm = eval(base - h, &mut m);
        let numeric = (fp - fm) / (2.0 * h);
        let analytic = grads.get(&name).unwrap().grad.data()[idx];
        let gap = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        assert!(
            gap < E2E_TOL,
            "{name}[{idx}]: analytic {analytic:.6e} vs numeric {numeric:.6e} (gap {gap:.3e})"
        );
        checked += 1;
    }
    assert_eq!(checked, 20);
}
