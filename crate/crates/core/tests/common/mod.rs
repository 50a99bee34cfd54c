#![allow(dead_code)]

use emc_probe::autodiff::Tensor;
use emc_probe::data::Dataset;
use emc_probe::models::{Activation, Family, InputShape, ModelSpec};
use emc_probe::objective::{Objective, Precision};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

/// Gaussian inputs with uniformly random labels.
pub fn noise_dataset(n: usize, sample: &[usize], classes: usize, seed: u64) -> Dataset {
    let numel: usize = sample.iter().product();
    let mut shape = vec![n];
    shape.extend_from_slice(sample);
    let x = Tensor::new(shape, gaussian(n * numel, seed)).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    let labels = (0..n).map(|_| r.random_range(0..classes)).collect();
    Dataset::new("noise", x, labels, classes).unwrap()
}

pub fn mlp(features: usize, width: usize, depth: usize, classes: usize, act: Activation) -> ModelSpec {
    ModelSpec {
        family: Family::Mlp,
        input_shape: InputShape::Features(features),
        num_classes: classes,
        width,
        depth,
        activation: act,
        init_seed: 0,
    }
}

pub fn image_model(family: Family, chw: [usize; 3], width: usize, depth: usize, classes: usize, act: Activation) -> ModelSpec {
    ModelSpec { family, input_shape: InputShape::Image(chw), num_classes: classes, width, depth, activation: act, init_seed: 0 }
}

pub fn linear(features: usize, classes: usize) -> ModelSpec {
    ModelSpec {
        family: Family::Linear,
        input_shape: InputShape::Features(features),
        num_classes: classes,
        width: 1,
        depth: 1,
        activation: Activation::Identity,
        init_seed: 0,
    }
}

pub fn loss(obj: &dyn Objective, w: &[f64], ds: &Dataset, smoothing: f64) -> f64 {
    obj.loss_grad(w, ds.inputs(), ds.labels(), smoothing, Precision::F64).unwrap().loss
}

pub fn grad(obj: &dyn Objective, w: &[f64], ds: &Dataset, smoothing: f64) -> Vec<f64> {
    obj.loss_grad(w, ds.inputs(), ds.labels(), smoothing, Precision::F64).unwrap().grad
}

/// Central differences of the loss, one coordinate at a time.
pub fn fd_gradient(obj: &dyn Objective, w: &[f64], ds: &Dataset, smoothing: f64, h: f64) -> Vec<f64> {
    let mut p = w.to_vec();
    (0..w.len())
        .map(|i| {
            p[i] = w[i] + h;
            let up = loss(obj, &p, ds, smoothing);
            p[i] = w[i] - h;
            let down = loss(obj, &p, ds, smoothing);
            p[i] = w[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `|a − b| / max(|a|, |b|)`, norm-wise.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(f64::MIN_POSITIVE)
}
