use parmri::jdsi::*;
use parmri::mask::make_mask_1d;
use parmri::numerics::C64;
use parmri::phantom::{sample_spec, synth_sample};
use std::time::Instant;

fn main() {
    let mut cfg = JdsiConfig::desk();
    cfg.epochs = 1;
    cfg.seed = 7;
    let samples: Vec<TrainSample> = (0..20)
        .map(|i| {
            let spec = sample_spec(cfg.height, cfg.width, 1, i as u64, 0.0, false);
            let (_, maps, kfull) = synth_sample(&spec, cfg.coils).unwrap();
            let mask = make_mask_1d(cfg.width, cfg.height, 4.0, 12, 1000 + i as u64).unwrap();
            let mut y = kfull.clone();
            for j in 0..cfg.coils {
                for (p, v) in y.plane_mut(j).iter_mut().enumerate() {
                    if !mask.omega()[p] { *v = C64::new(0.0, 0.0); }
                }
            }
            let full = make_mask_1d(cfg.width, cfg.height, 1.0, 0, 0).unwrap();
            let coil_images = parmri::sense::zero_filled(&kfull, &full).unwrap();
            TrainSample { y, mask, reference_coils: coil_images, reference_maps: maps, external_maps: None }
        })
        .collect();
    let mut model: JdsiModel<f32> = JdsiModel::new(cfg.clone()).unwrap();
    let t0 = Instant::now();
    let _hist = train(&mut model, &samples, &[], None).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("per batch-step {:.3}s; projected 30ep x 200 samples: {:.1} min", dt / 10.0, dt / 20.0 * 200.0 * 30.0 / 60.0);
}
