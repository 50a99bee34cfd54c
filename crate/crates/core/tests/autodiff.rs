mod common;

use common::*;
use emc_probe::autodiff::{default_hvp_epsilon, grad as tape_grad, hvp, ParamVector, Tape, Tensor};
use emc_probe::models::{build, Activation, Family};
use emc_probe::objective::{Objective, Precision};
use proptest::prelude::*;

fn check_model_gradient(spec: emc_probe::models::ModelSpec, sample: &[usize], smoothing: f64, tol: f64) {
    let model = build(&spec).unwrap();
    let ds = noise_dataset(6, sample, spec.num_classes, 11);
    let w = model.initial_params();
    let g = grad(&model, &w, &ds, smoothing);
    let fd = fd_gradient(&model, &w, &ds, smoothing, 1e-6);
    let e = rel_err(&g, &fd);
    assert!(e <= tol, "{:?}: relative error {e:e}", spec.family);
}

#[test]
fn mlp_gradients_match_finite_differences() {
    for act in [Activation::Relu, Activation::Tanh, Activation::Sigmoid, Activation::Identity] {
        check_model_gradient(mlp(5, 7, 2, 3, act), &[5], 0.0, 1e-6);
    }
}

#[test]
fn smoothed_loss_gradient_matches_finite_differences() {
    check_model_gradient(mlp(4, 6, 1, 4, Activation::Tanh), &[4], 0.1, 1e-6);
}

#[test]
fn conv_gradients_match_finite_differences() {
    check_model_gradient(image_model(Family::Cnn, [2, 6, 6], 3, 2, 3, Activation::Tanh), &[2, 6, 6], 0.0, 1e-6);
    check_model_gradient(image_model(Family::ResnetCnn, [1, 6, 6], 3, 2, 2, Activation::Tanh), &[1, 6, 6], 0.0, 1e-6);
    check_model_gradient(linear(9, 3), &[9], 0.0, 1e-7);
}

#[test]
fn single_precision_gradient_tracks_double() {
    let spec = mlp(6, 8, 2, 3, Activation::Tanh);
    let model = build(&spec).unwrap();
    let ds = noise_dataset(16, &[6], 3, 2);
    let w = model.initial_params();
    let g64 = model.loss_grad(&w, ds.inputs(), ds.labels(), 0.0, Precision::F64).unwrap();
    let g32 = model.loss_grad(&w, ds.inputs(), ds.labels(), 0.0, Precision::F32).unwrap();
    assert!((g64.loss - g32.loss).abs() < 1e-5);
    assert!(rel_err(&g64.grad, &g32.grad) < 1e-4);
}

/// Exact Hessian of mean softmax cross-entropy for a linear model with
/// parameters laid out as rows of `[W; b]`.
fn linear_softmax_hessian(w: &[f64], x: &[f64], labels_len: usize, f: usize, k: usize) -> Vec<f64> {
    let d = (f + 1) * k;
    let mut h = vec![0.0; d * d];
    for s in 0..labels_len {
        let mut a: Vec<f64> = x[s * f..(s + 1) * f].to_vec();
        a.push(1.0);
        let z: Vec<f64> = (0..k).map(|c| (0..=f).map(|i| a[i] * w[i * k + c]).sum()).collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let tot: f64 = e.iter().sum();
        let p: Vec<f64> = e.iter().map(|v| v / tot).collect();
        for i in 0..=f {
            for c in 0..k {
                for j in 0..=f {
                    for dd in 0..k {
                        let s_cd = if c == dd { p[c] } else { 0.0 } - p[c] * p[dd];
                        h[(i * k + c) * d + j * k + dd] += a[i] * a[j] * s_cd / labels_len as f64;
                    }
                }
            }
        }
    }
    h
}

#[test]
fn hvp_matches_analytic_softmax_hessian() {
    let (f, k, n) = (4, 3, 10);
    let model = build(&linear(f, k)).unwrap();
    let ds = noise_dataset(n, &[f], k, 4);
    let w: Vec<f64> = gaussian(model.dim(), 8).iter().map(|v| 0.5 * v).collect();
    let h = linear_softmax_hessian(&w, ds.inputs().data(), n, f, k);
    let d = model.dim();
    for seed in 0..5 {
        let v = gaussian(d, 100 + seed);
        let hv = hvp(|p| Ok(grad(&model, p, &ds, 0.0)), &w, &v, default_hvp_epsilon(&w)).unwrap();
        let exact: Vec<f64> = (0..d).map(|r| dot(&h[r * d..(r + 1) * d], &v)).collect();
        assert!(rel_err(&hv, &exact) < 1e-6, "seed {seed}: {:e}", rel_err(&hv, &exact));
    }
}

#[test]
fn tape_handles_shared_subexpressions() {
    // f(a, b) = sum((a*b + a) * a) = Σ a²b + a²; ∂a = 2ab + 2a, ∂b = a².
    let a0 = [1.5, -2.0, 0.25];
    let b0 = [0.5, 3.0, -1.0];
    let params = ParamVector::flat(a0.iter().chain(&b0).copied().collect());
    let segs = vec![
        emc_probe::autodiff::Segment { layer: "x".into(), name: "a".into(), offset: 0, shape: vec![3] },
        emc_probe::autodiff::Segment { layer: "x".into(), name: "b".into(), offset: 3, shape: vec![3] },
    ];
    let params = ParamVector::new(params.into_values(), segs).unwrap();
    let (v, g) = tape_grad(&params, |t: &mut Tape<f64>, l| {
        let ab = t.mul(l[0], l[1])?;
        let s = t.add(ab, l[0])?;
        let p = t.mul(s, l[0])?;
        t.sum(p)
    })
    .unwrap();
    let expect_v: f64 = (0..3).map(|i| a0[i] * a0[i] * b0[i] + a0[i] * a0[i]).sum();
    assert!((v - expect_v).abs() < 1e-14);
    for i in 0..3 {
        assert!((g.values()[i] - (2.0 * a0[i] * b0[i] + 2.0 * a0[i])).abs() < 1e-14);
        assert!((g.values()[3 + i] - a0[i] * a0[i]).abs() < 1e-14);
    }
}

#[test]
fn backward_is_repeatable() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::new(vec![2, 2], vec![0.3, -0.7, 1.1, 0.2]).unwrap());
    let y = t.tanh(x).unwrap();
    let s = t.sum(y).unwrap();
    let g1 = t.backward(s).unwrap().wrt(x);
    let g2 = t.backward(s).unwrap().wrt(x);
    assert_eq!(g1, g2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hvp_is_linear_and_symmetric(seed in 0u64..10_000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let model = build(&mlp(3, 5, 1, 2, Activation::Tanh)).unwrap();
        let ds = noise_dataset(8, &[3], 2, seed);
        let w = model.initial_params();
        let d = model.dim();
        let (u, v) = (gaussian(d, seed + 1), gaussian(d, seed + 2));
        let eps = default_hvp_epsilon(&w);
        let op = |dir: &[f64]| hvp(|p| Ok(grad(&model, p, &ds, 0.0)), &w, dir, eps).unwrap();
        let (hu, hv) = (op(&u), op(&v));
        let combo: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
        prop_assume!(norm(&combo) > 1e-3);
        let h_combo = op(&combo);
        let expect: Vec<f64> = hu.iter().zip(&hv).map(|(x, y)| a * x + b * y).collect();
        prop_assert!(rel_err(&h_combo, &expect) < 1e-5);
        let (uhv, vhu) = (dot(&u, &hv), dot(&v, &hu));
        prop_assert!((uhv - vhu).abs() <= 1e-5 * (1.0 + uhv.abs()));
    }

    #[test]
    fn gradient_matches_fd_for_random_points(seed in 0u64..10_000) {
        let model = build(&mlp(3, 4, 2, 3, Activation::Sigmoid)).unwrap();
        let ds = noise_dataset(5, &[3], 3, seed);
        let w: Vec<f64> = gaussian(model.dim(), seed).iter().map(|v| 0.7 * v).collect();
        let g = grad(&model, &w, &ds, 0.0);
        let fd = fd_gradient(&model, &w, &ds, 0.0, 1e-6);
        prop_assert!(rel_err(&g, &fd) < 1e-6);
    }
}
