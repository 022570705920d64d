use parmri::jdsi::*;
use parmri::metrics::{psnr, rlne};
use parmri::scenario::*;
use parmri::recon::cg_sense;

fn main() {
    let ckpt = std::env::args().nth(1).unwrap();
    let cohort = load_cohort(std::path::Path::new("/tmp/c7run/cohort")).unwrap();
    let mut cfg = JdsiConfig::desk();
    cfg.seed = 42;
    let mut model: JdsiModel<f32> = JdsiModel::new(cfg.clone()).unwrap();
    load_checkpoint(std::path::Path::new(&ckpt), &mut model).unwrap();
    print!("scalars: gamma {:.3} lambda {:.1}", 
        model.store.scalar_value("gamma").unwrap(),
        model.store.scalar_value("lambda").unwrap());
    for k in 0..cfg.phases {
        print!(" rho_{k} {:.4}", model.store.scalar_value(&format!("rho_{k}")).unwrap());
    }
    println!();
    let setting = training_setting(cohort.width);
    let sample = &cohort.test[0];
    let mask = setting.build(64, 64, sample_mask_seed(42, sample.id)).unwrap();
    let y = undersample(&sample.kspace, &mask);
    let rec = reconstruct(&model, &y, &mask, None).unwrap();
    let gt = reference_maps(sample).unwrap();
    let map_err = |maps: &parmri::sense::SenseMaps| -> f64 {
        let mut num = 0.0; let mut den = 0.0;
        for p in 0..64*64 {
            if gt.foreground()[p] {
                for j in 0..4 {
                    num += (maps.plane(j)[p] - gt.plane(j)[p]).norm_sqr();
                    den += gt.plane(j)[p].norm_sqr();
                }
            }
        }
        (num / den).sqrt()
    };
    for (k, (img, maps)) in rec.phases.iter().enumerate() {
        println!("phase {k}: rlne {:.4}, map err {:.4}", rlne(img, &sample.truth).unwrap(), map_err(maps));
    }
    // how good would a classical solve be with the learned final maps?
    let (cg_learned, _) = cg_sense(&y, &rec.maps, &mask, 50, 1e-6).unwrap();
    let acs = parmri::calib::acs_lowres_maps(&y, &mask, parmri::calib::Taper::RaisedCosine).unwrap();
    let (cg_acs, _) = cg_sense(&y, &acs, &mask, 50, 1e-6).unwrap();
    let (cg_gt, _) = cg_sense(&y, &gt, &mask, 50, 1e-6).unwrap();
    println!("cg with learned maps: {:.4} (acs maps {:.4}, gt maps {:.4}; acs map err {:.4})",
        rlne(&cg_learned, &sample.truth).unwrap(),
        rlne(&cg_acs, &sample.truth).unwrap(),
        rlne(&cg_gt, &sample.truth).unwrap(),
        map_err(&acs));
    println!("jdsi final: rlne {:.4}, psnr {:.2}", rlne(&rec.image, &sample.truth).unwrap(), psnr(&rec.image, &sample.truth).unwrap());
}
