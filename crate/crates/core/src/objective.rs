//! The trainable-function abstraction shared by the training loop, the
//! convergence certificates and the reparameterized wrappers.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Segment, Tensor};
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Arithmetic width used for forward/backward passes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// Terms of the training objective beyond plain cross-entropy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub label_smoothing: f64,
    /// Coefficient of `0.5·l2·|θ|²`.
    pub l2: f64,
}

/// Loss, gradient and correct-prediction count for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub correct: usize,
    pub count: usize,
}

pub trait Objective: Send + Sync {
    /// Number of trainable scalars.
    fn dim(&self) -> usize;

    /// Named tensors the trainable vector is split into.
    fn segments(&self) -> Vec<Segment>;

    fn initial_params(&self) -> Vec<f64>;

    /// Mean (smoothed) cross-entropy over the batch and its gradient.
    fn loss_grad(
        &self,
        w: &[f64],
        inputs: &Tensor<f64>,
        labels: &[usize],
        label_smoothing: f64,
        precision: Precision,
    ) -> Result<Evaluation>;

    fn logits(&self, w: &[f64], inputs: &Tensor<f64>) -> Result<Tensor<f64>>;

    /// [`Objective::loss_grad`] at 64-bit with every piecewise-linear
    /// activation held in the on/off pattern it has at `anchor`. Finite
    /// differences of this gradient around `anchor` see the curvature of the
    /// linear region containing `anchor` and no kinks.
    fn anchored_loss_grad(
        &self,
        _anchor: &[f64],
        w: &[f64],
        inputs: &Tensor<f64>,
        labels: &[usize],
        label_smoothing: f64,
    ) -> Result<Evaluation> {
        self.loss_grad(w, inputs, labels, label_smoothing, Precision::F64)
    }

    /// Storage width charged per trainable scalar in bit accounting.
    fn bits_per_param(&self) -> u32 {
        32
    }

    /// A smooth objective and point whose Hessian stands in for this one's.
    /// Used when the forward pass is piecewise constant in `w`.
    fn curvature_view(&self, _w: &[f64]) -> Option<(&dyn Objective, Vec<f64>)> {
        None
    }
}

/// Total bits needed to specify the trainable state of `obj`.
pub fn effective_bits(obj: &dyn Objective) -> u64 {
    obj.dim() as u64 * obj.bits_per_param() as u64
}

/// [`Objective::loss_grad`] plus the L2 term of `cfg`.
pub fn evaluate(
    obj: &dyn Objective,
    w: &[f64],
    inputs: &Tensor<f64>,
    labels: &[usize],
    cfg: &LossConfig,
    precision: Precision,
) -> Result<Evaluation> {
    let mut ev = obj.loss_grad(w, inputs, labels, cfg.label_smoothing, precision)?;
    if cfg.l2 != 0.0 {
        ev.loss += 0.5 * cfg.l2 * w.iter().map(|v| v * v).sum::<f64>();
        for (g, v) in ev.grad.iter_mut().zip(w) {
            *g += cfg.l2 * v;
        }
    }
    if !ev.loss.is_finite() {
        return Err(Error::NonFinite { op: "loss" });
    }
    Ok(ev)
}

/// Row counts of prediction chunks used when scanning a whole dataset.
pub(crate) const EVAL_CHUNK: usize = 512;

/// Index of the strictly largest logit, or `None` on a tie for the maximum.
pub fn strict_argmax(row: &[f64]) -> Option<usize> {
    let mut best = 0;
    let mut tie = false;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
            tie = false;
        } else if v == row[best] {
            tie = true;
        }
    }
    (!tie).then_some(best)
}

/// Counts samples whose true-class logit strictly exceeds every other logit.
pub fn count_correct(logits: &Tensor<f64>, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &y)| strict_argmax(row) == Some(y))
        .count()
}

/// Fraction of `ds` classified correctly at `w`.
pub fn accuracy(obj: &dyn Objective, w: &[f64], ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Dataset("accuracy of an empty dataset".into()));
    }
    let mut correct = 0;
    for start in (0..ds.len()).step_by(EVAL_CHUNK) {
        let rows: Vec<usize> = (start..(start + EVAL_CHUNK).min(ds.len())).collect();
        let batch = ds.inputs().select_rows(&rows);
        let labels: Vec<usize> = rows.iter().map(|&r| ds.labels()[r]).collect();
        correct += count_correct(&obj.logits(w, &batch)?, &labels);
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Mean loss, mean gradient and accuracy over all of `ds`, at 64-bit,
/// accumulated in chunks of `chunk` rows.
pub fn full_evaluation(
    obj: &dyn Objective,
    w: &[f64],
    ds: &Dataset,
    cfg: &LossConfig,
    chunk: usize,
) -> Result<Evaluation> {
    full_evaluation_at(obj, None, w, ds, cfg, chunk)
}

/// [`full_evaluation`] through [`Objective::anchored_loss_grad`] when an
/// anchor is given.
pub fn full_evaluation_at(
    obj: &dyn Objective,
    anchor: Option<&[f64]>,
    w: &[f64],
    ds: &Dataset,
    cfg: &LossConfig,
    chunk: usize,
) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::Dataset("evaluation over an empty dataset".into()));
    }
    let chunk = chunk.max(1);
    let n = ds.len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; obj.dim()];
    let mut correct = 0;
    for start in (0..n).step_by(chunk) {
        let rows: Vec<usize> = (start..(start + chunk).min(n)).collect();
        let batch = ds.inputs().select_rows(&rows);
        let labels: Vec<usize> = rows.iter().map(|&r| ds.labels()[r]).collect();
        let ev = match anchor {
            Some(a) => obj.anchored_loss_grad(a, w, &batch, &labels, cfg.label_smoothing)?,
            None => obj.loss_grad(w, &batch, &labels, cfg.label_smoothing, Precision::F64)?,
        };
        let weight = rows.len() as f64 / n as f64;
        loss += weight * ev.loss;
        for (a, b) in grad.iter_mut().zip(&ev.grad) {
            *a += weight * b;
        }
        correct += ev.correct;
    }
    if cfg.l2 != 0.0 {
        loss += 0.5 * cfg.l2 * w.iter().map(|v| v * v).sum::<f64>();
        for (g, v) in grad.iter_mut().zip(w) {
            *g += cfg.l2 * v;
        }
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { op: "full_gradient" });
    }
    Ok(Evaluation { loss, grad, correct, count: n })
}
