use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TransformKind {
    #[default]
    None,
    /// Labels drawn i.i.d. uniformly over the classes; inputs untouched.
    RandomLabels,
    /// Inputs replaced by standard normal noise of the same shape.
    GaussianInputs,
    /// One seeded permutation of pixel positions shared by every sample.
    FixedPermutation,
    /// Seeded partition of the classes into `k` near-equal groups.
    MergeClasses { k: usize },
    Binarize,
    /// Bilinear resampling of image inputs.
    Resize { height: usize, width: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformSpec {
    pub kind: TransformKind,
    #[serde(default)]
    pub seed: u64,
}

impl TransformSpec {
    pub fn new(kind: TransformKind, seed: u64) -> Self {
        TransformSpec { kind, seed }
    }
}

fn image_dims(ds: &Dataset, what: &str) -> Result<(usize, usize, usize)> {
    match ds.sample_dims() {
        &[c, h, w] => Ok((c, h, w)),
        other => Err(Error::InvalidTransform(format!("{what} needs image samples (C×H×W), got {other:?}"))),
    }
}

/// Applies one intervention. Pure in `(transform, ds)`.
pub fn apply(transform: &TransformSpec, ds: &Dataset) -> Result<Dataset> {
    let mut rng = seed::rng(seed::derive_str(transform.seed, "transform"));
    match transform.kind {
        TransformKind::None => Ok(ds.clone()),
        TransformKind::RandomLabels => {
            let k = ds.num_classes();
            let labels = (0..ds.len()).map(|_| rng.random_range(0..k)).collect();
            ds.with_parts(ds.inputs().clone(), labels, k)
        }
        TransformKind::GaussianInputs => {
            let data = (0..ds.inputs().len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let inputs = Tensor::new(ds.inputs().shape().to_vec(), data)?;
            ds.with_parts(inputs, ds.labels().to_vec(), ds.num_classes())
        }
        TransformKind::FixedPermutation => {
            image_dims(ds, "fixed_permutation")?;
            let width = ds.inputs().row_len();
            let mut perm: Vec<usize> = (0..width).collect();
            perm.shuffle(&mut rng);
            let src = ds.inputs().data();
            let mut data = Vec::with_capacity(src.len());
            for row in src.chunks(width) {
                data.extend(perm.iter().map(|&p| row[p]));
            }
            let inputs = Tensor::new(ds.inputs().shape().to_vec(), data)?;
            ds.with_parts(inputs, ds.labels().to_vec(), ds.num_classes())
        }
        TransformKind::MergeClasses { k } => merge_classes(ds, k, &mut rng),
        TransformKind::Binarize => merge_classes(ds, 2, &mut rng),
        TransformKind::Resize { height, width } => resize(ds, height, width),
    }
}

/// Applies a chain of interventions left to right.
pub fn apply_all(transforms: &[TransformSpec], ds: &Dataset) -> Result<Dataset> {
    transforms.iter().try_fold(ds.clone(), |acc, t| apply(t, &acc))
}

fn merge_classes(ds: &Dataset, k: usize, rng: &mut seed::Rng) -> Result<Dataset> {
    let c = ds.num_classes();
    if k < 2 || k > c {
        return Err(Error::InvalidTransform(format!("cannot merge {c} classes into {k} groups")));
    }
    let mut order: Vec<usize> = (0..c).collect();
    order.shuffle(rng);
    let mut group = vec![0; c];
    for (pos, &class) in order.iter().enumerate() {
        group[class] = pos % k;
    }
    let labels = ds.labels().iter().map(|&l| group[l]).collect();
    ds.with_parts(ds.inputs().clone(), labels, k)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Source coordinate and blend weight for half-pixel-centred resampling.
fn taps(out: usize, input: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

fn resize(ds: &Dataset, height: usize, width: usize) -> Result<Dataset> {
    let (c, h, w) = image_dims(ds, "resize")?;
    if height == 0 || width == 0 {
        return Err(Error::InvalidTransform(format!("resize target {height}x{width} must be at least 1x1")));
    }
    let ys = taps(height, h);
    let xs = taps(width, w);
    let mut data = Vec::with_capacity(ds.len() * c * height * width);
    for plane in ds.inputs().data().chunks(h * w) {
        for &(y0, y1, ty) in &ys {
            for &(x0, x1, tx) in &xs {
                let top = lerp(plane[y0 * w + x0], plane[y0 * w + x1], tx);
                let bottom = lerp(plane[y1 * w + x0], plane[y1 * w + x1], tx);
                data.push(lerp(top, bottom, ty));
            }
        }
    }
    let inputs = Tensor::new(vec![ds.len(), c, height, width], data)?;
    ds.with_parts(inputs, ds.labels().to_vec(), ds.num_classes())
}
