//! Central-difference gradient checks: every differentiable operator in
//! double precision, plus the end-to-end loss of the unrolled network on a
//! toy configuration.

#[path = "common/gradcheck.rs"]
mod gradcheck;

use gradcheck::{check_op, rand_tensor};
use parmri::mask::make_mask_1d;
use parmri::nn::kernels::bn_batch_stats;
use parmri::nn::{MaskBatch, Tape, Tensor};
use std::sync::Arc;

#[test]
fn conv3x3_gradients() {
    let x = rand_tensor([2, 3, 5, 5], 1);
    let w = rand_tensor([2, 3, 3, 3], 2);
    let b = rand_tensor([1, 2, 1, 1], 3);
    check_op("conv3x3", &[x, w, b], &|t, v| t.conv3x3(v[0], v[1], v[2]).unwrap());
}

#[test]
fn conv3x3_bias_gradient_closed_form() {
    // loss = sum(conv(x, w, b)): dL/db = N*H*W per output channel
    let x = rand_tensor([2, 1, 4, 6], 4);
    let w = rand_tensor([3, 1, 3, 3], 5);
    let b = rand_tensor([1, 3, 1, 1], 6);
    let mut tape = Tape::new();
    let xv = tape.input(x);
    let wv = tape.input(w);
    let bv = tape.input_with_grad(b);
    let out = tape.conv3x3(xv, wv, bv).unwrap();
    let loss = tape.sum_all(out);
    tape.backward(loss).unwrap();
    for &g in tape.grad(bv).unwrap().data() {
        assert!((g - (2 * 4 * 6) as f64).abs() < 1e-9, "bias grad {g}");
    }
}

#[test]
fn batchnorm_train_gradients() {
    let x = rand_tensor([2, 3, 4, 4], 7);
    let scale = rand_tensor([1, 3, 1, 1], 8);
    let shift = rand_tensor([1, 3, 1, 1], 9);
    check_op("batchnorm-train", &[x, scale, shift], &|t, v| {
        let (mean, _, inv_std) = bn_batch_stats(t.value(v[0])).unwrap();
        t.batchnorm(v[0], v[1], v[2], mean, inv_std, true).unwrap()
    });
}

#[test]
fn batchnorm_eval_gradients() {
    let x = rand_tensor([2, 3, 4, 4], 10);
    let scale = rand_tensor([1, 3, 1, 1], 11);
    let shift = rand_tensor([1, 3, 1, 1], 12);
    let rm = vec![0.1, -0.2, 0.05];
    let rv: Vec<f64> = vec![0.9, 1.2, 0.7];
    let inv_std: Vec<f64> = rv.iter().map(|v| 1.0 / (v + 1e-5).sqrt()).collect();
    check_op("batchnorm-eval", &[x, scale, shift], &move |t, v| {
        t.batchnorm(v[0], v[1], v[2], rm.clone(), inv_std.clone(), false).unwrap()
    });
}

#[test]
fn relu_gradients() {
    let x = rand_tensor([1, 2, 6, 6], 13);
    check_op("relu", &[x], &|t, v| t.relu(v[0]));
}

#[test]
fn softthresh_real_gradients() {
    let x = rand_tensor([1, 2, 5, 5], 14);
    let rho = Tensor::scalar(0.3);
    check_op("softthresh-real", &[x, rho], &|t, v| t.softthresh_real(v[0], v[1]).unwrap());
}

#[test]
fn softthresh_complex_gradients() {
    let x = rand_tensor([1, 4, 4, 4], 15);
    let rho = Tensor::scalar(0.4);
    check_op("softthresh-complex", &[x, rho], &|t, v| t.softthresh_complex(v[0], v[1]).unwrap());
}

#[test]
fn pool_and_upsample_gradients() {
    let x = rand_tensor([1, 2, 6, 6], 16);
    check_op("maxpool2", &[x.clone()], &|t, v| t.maxpool2(v[0]).unwrap());
    check_op("upsample2", &[x], &|t, v| t.upsample2(v[0]));
}

#[test]
fn concat_add_sub_scale_gradients() {
    let a = rand_tensor([1, 2, 4, 4], 17);
    let b = rand_tensor([1, 3, 4, 4], 18);
    check_op("concat", &[a.clone(), b], &|t, v| t.concat_channels(v[0], v[1]).unwrap());
    let c = rand_tensor([1, 2, 4, 4], 19);
    check_op("add", &[a.clone(), c.clone()], &|t, v| t.add(v[0], v[1]).unwrap());
    check_op("sub", &[a.clone(), c], &|t, v| t.sub(v[0], v[1]).unwrap());
    let s = Tensor::scalar(0.7);
    check_op("scale-by-scalar", &[a.clone(), s], &|t, v| t.scale_by_scalar(v[0], v[1]).unwrap());
    check_op("mul-const", &[a], &|t, v| t.mul_const(v[0], -1.3));
}

#[test]
fn fft_and_mask_gradients() {
    let x = rand_tensor([1, 4, 6, 6], 20);
    check_op("fft2c", &[x.clone()], &|t, v| t.fft2c(v[0]).unwrap());
    check_op("ifft2c", &[x.clone()], &|t, v| t.ifft2c(v[0]).unwrap());
    let mask = make_mask_1d(6, 6, 2.0, 2, 3).unwrap();
    let mb = Arc::new(MaskBatch::from_masks(&[&mask]).unwrap());
    check_op("apply-mask", &[x], &move |t, v| t.apply_mask(v[0], mb.clone()).unwrap());
}

#[test]
fn coil_algebra_gradients() {
    let maps = rand_tensor([1, 4, 4, 4], 21);
    let img = rand_tensor([1, 2, 4, 4], 22);
    check_op("coil-expand", &[maps.clone(), img], &|t, v| t.coil_expand(v[0], v[1]).unwrap());
    let stack = rand_tensor([1, 4, 4, 4], 23);
    check_op("coil-combine", &[maps.clone(), stack], &|t, v| {
        t.coil_combine(v[0], v[1]).unwrap()
    });
    check_op("sos-normalize", &[maps], &|t, v| t.sos_normalize(v[0]));
}

#[test]
fn dc_blend_gradients() {
    let k = rand_tensor([1, 4, 6, 6], 24);
    let y = Arc::new(rand_tensor([1, 4, 6, 6], 25));
    let mask = make_mask_1d(6, 6, 1.5, 2, 4).unwrap();
    let mb = Arc::new(MaskBatch::from_masks(&[&mask]).unwrap());
    let lambda = Tensor::scalar(3.0);
    check_op("dc-blend", &[k, lambda], &move |t, v| {
        t.dc_blend(v[0], v[1], y.clone(), mb.clone()).unwrap()
    });
}

#[test]
fn reductions_gradients() {
    let x = rand_tensor([1, 2, 3, 3], 26);
    check_op("sum-all", &[x.clone()], &|t, v| t.sum_all(v[0]));
    check_op("sum-squares", &[x.clone()], &|t, v| t.sum_squares(v[0]));
    check_op("add-weighted", &[x.clone(), x], &|t, v| {
        let s1 = t.sum_squares(v[0]);
        let s2 = t.sum_all(v[1]);
        t.add_weighted(&[(s1, 0.4), (s2, -1.7)]).unwrap()
    });
}

#[test]
fn zero_upstream_gradient_gives_zero_parameter_gradients() {
    let x = rand_tensor([1, 2, 4, 4], 27);
    let w = rand_tensor([2, 2, 3, 3], 28);
    let b = rand_tensor([1, 2, 1, 1], 29);
    let mut tape = Tape::new();
    let xv = tape.input(x);
    let wv = tape.input_with_grad(w);
    let bv = tape.input_with_grad(b);
    let out = tape.conv3x3(xv, wv, bv).unwrap();
    let summed = tape.sum_all(out);
    let loss = tape.mul_const(summed, 0.0);
    tape.backward(loss).unwrap();
    assert!(tape.grad(wv).unwrap().data().iter().all(|&g| g == 0.0));
    assert!(tape.grad(bv).unwrap().data().iter().all(|&g| g == 0.0));
}

#[test]
fn backward_without_scalar_loss_is_an_error() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.input_with_grad(rand_tensor([1, 1, 2, 2], 30));
    assert!(tape.backward(x).is_err());
}

#[test]
fn end_to_end_loss_gradients() {
    gradcheck::check_end_to_end();
}
