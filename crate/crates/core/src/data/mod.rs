//! Datasets, loaders, synthetic generators and the label/input interventions.

mod csv_load;
pub mod emct;
mod synth;
mod transform;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seed;

pub use csv_load::load_csv;
pub use emct::{load_tensor_file, save_tensor_files, DatasetManifest};
pub use synth::synth_clusters;
pub use transform::{apply, apply_all, TransformKind, TransformSpec};

/// Immutable sample store: inputs of shape `N × …`, one label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    inputs: Tensor<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, inputs: Tensor<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.ndim() < 2 {
            return Err(Error::Dataset(format!("inputs need a leading sample axis, got shape {:?}", inputs.shape())));
        }
        if inputs.shape()[0] != labels.len() {
            return Err(Error::Dataset(format!("{} input rows but {} labels", inputs.shape()[0], labels.len())));
        }
        if num_classes < 1 {
            return Err(Error::Dataset("num_classes must be positive".into()));
        }
        if let Some((i, &bad)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::Dataset(format!("label {bad} at row {i} outside [0, {num_classes})")));
        }
        Ok(Dataset { name: name.into(), inputs, labels, num_classes })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn inputs(&self) -> &Tensor<f64> {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample dimensions (everything after the leading axis).
    pub fn sample_dims(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.inputs.row_len();
        &self.inputs.data()[i * w..(i + 1) * w]
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            inputs: self.inputs.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Rejects datasets in which two rows share bit-identical inputs but
    /// carry different labels.
    pub fn check_conflicts(&self) -> Result<()> {
        let mut seen: HashMap<Vec<u64>, (usize, usize)> = HashMap::new();
        for i in 0..self.len() {
            let key: Vec<u64> = self.row(i).iter().map(|v| (v + 0.0).to_bits()).collect();
            match seen.get(&key) {
                Some(&(j, l)) if l != self.labels[i] => {
                    return Err(Error::Dataset(format!(
                        "rows {j} and {i} have identical inputs but labels {l} and {}",
                        self.labels[i]
                    )))
                }
                Some(_) => {}
                None => {
                    seen.insert(key, (i, self.labels[i]));
                }
            }
        }
        Ok(())
    }

    /// Seeded split into (train, test) with `round(N·test_fraction)` test rows.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::InvalidArgument(format!("test fraction {test_fraction} not in [0, 1)")));
        }
        let n_test = (self.len() as f64 * test_fraction).round() as usize;
        let order = rand::seq::index::sample(&mut seed::rng(seed::derive_str(seed, "split")), self.len(), self.len())
            .into_vec();
        let (test, train) = order.split_at(n_test);
        Ok((self.select(train), self.select(test)))
    }

    pub(crate) fn with_parts(&self, inputs: Tensor<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Dataset> {
        Dataset::new(self.name.clone(), inputs, labels, num_classes)
    }
}

/// Draw of `n` distinct rows, in seeded order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSampler {
    pub n: usize,
    pub seed: u64,
}

pub fn subsample(ds: &Dataset, sampler: SubsetSampler) -> Result<Dataset> {
    if sampler.n > ds.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {} samples from a dataset of {}",
            sampler.n,
            ds.len()
        )));
    }
    let mut rng = seed::rng(seed::derive_str(sampler.seed, "subsample"));
    let rows = rand::seq::index::sample(&mut rng, ds.len(), sampler.n).into_vec();
    Ok(ds.select(&rows))
}
