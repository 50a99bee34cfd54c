//! Random-subspace training and fake-quantized training.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Segment, Tensor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::objective::{Evaluation, Objective, Precision};
use crate::optim::{train, TrainConfig, TrainReport};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubspaceSpec {
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to `1/√dim`.
    #[serde(default)]
    pub scale: Option<f64>,
    /// Gram-Schmidt the projection columns before use.
    #[serde(default)]
    pub orthonormalize: bool,
}

/// Trainable coordinates `z` with parameters `θ₀ + scale·P·z`.
pub struct SubspaceModel {
    base: Model,
    theta0: Vec<f64>,
    /// Column `j` of `P` at `[j·d, (j+1)·d)`.
    columns: Vec<f64>,
    dim: usize,
    scale: f64,
}

impl SubspaceModel {
    pub fn new(base: Model, spec: &SubspaceSpec) -> Result<Self> {
        let ambient = base.dim();
        if spec.dim < 1 || spec.dim > ambient {
            return Err(Error::InvalidArgument(format!(
                "subspace dimension {} outside [1, {ambient}]",
                spec.dim
            )));
        }
        let scale = spec.scale.unwrap_or(1.0 / (spec.dim as f64).sqrt());
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidArgument(format!("subspace scale {scale} must be positive")));
        }
        let mut rng = seed::rng(seed::derive_str(spec.seed, "subspace"));
        let mut columns: Vec<f64> = (0..spec.dim * ambient).map(|_| StandardNormal.sample(&mut rng)).collect();
        if spec.orthonormalize {
            orthonormalize(&mut columns, ambient)?;
        }
        let theta0 = base.params().values().to_vec();
        Ok(SubspaceModel { base, theta0, columns, dim: spec.dim, scale })
    }

    pub fn base(&self) -> &Model {
        &self.base
    }

    pub fn column(&self, j: usize) -> &[f64] {
        let d = self.theta0.len();
        &self.columns[j * d..(j + 1) * d]
    }

    /// Ambient parameters `θ₀ + scale·P·z`.
    pub fn lift(&self, z: &[f64]) -> Vec<f64> {
        let d = self.theta0.len();
        let mut theta = self.theta0.clone();
        for (col, &zj) in self.columns.chunks(d).zip(z) {
            if zj != 0.0 {
                let c = self.scale * zj;
                theta.iter_mut().zip(col).for_each(|(t, p)| *t += c * p);
            }
        }
        theta
    }

    /// `scale·Pᵀ·g`.
    pub fn project(&self, g: &[f64]) -> Vec<f64> {
        self.columns
            .chunks(self.theta0.len())
            .map(|col| self.scale * col.iter().zip(g).map(|(p, gi)| p * gi).sum::<f64>())
            .collect()
    }
}

fn orthonormalize(columns: &mut [f64], d: usize) -> Result<()> {
    let k = columns.len() / d;
    for j in 0..k {
        for _ in 0..2 {
            for i in 0..j {
                let (done, rest) = columns.split_at_mut(j * d);
                let qi = &done[i * d..(i + 1) * d];
                let cj = &mut rest[..d];
                let c: f64 = qi.iter().zip(cj.iter()).map(|(a, b)| a * b).sum();
                cj.iter_mut().zip(qi).for_each(|(x, q)| *x -= c * q);
            }
        }
        let cj = &mut columns[j * d..(j + 1) * d];
        let n = cj.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-10 {
            return Err(Error::InvalidArgument("projection columns are linearly dependent".into()));
        }
        cj.iter_mut().for_each(|x| *x /= n);
    }
    Ok(())
}

impl Objective for SubspaceModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn segments(&self) -> Vec<Segment> {
        vec![Segment { layer: "subspace".into(), name: "z".into(), offset: 0, shape: vec![self.dim] }]
    }

    fn initial_params(&self) -> Vec<f64> {
        vec![0.0; self.dim]
    }

    fn loss_grad(
        &self,
        z: &[f64],
        inputs: &Tensor<f64>,
        labels: &[usize],
        label_smoothing: f64,
        precision: Precision,
    ) -> Result<Evaluation> {
        let ev = self.base.loss_grad(&self.lift(z), inputs, labels, label_smoothing, precision)?;
        Ok(Evaluation { grad: self.project(&ev.grad), ..ev })
    }

    fn logits(&self, z: &[f64], inputs: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.base.logits(&self.lift(z), inputs)
    }

    fn anchored_loss_grad(
        &self,
        anchor: &[f64],
        z: &[f64],
        inputs: &Tensor<f64>,
        labels: &[usize],
        label_smoothing: f64,
    ) -> Result<Evaluation> {
        let ev = self.base.anchored_loss_grad(&self.lift(anchor), &self.lift(z), inputs, labels, label_smoothing)?;
        Ok(Evaluation { grad: self.project(&ev.grad), ..ev })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantScheme {
    #[default]
    SymmetricPerTensor,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeSource {
    /// Scale taken from the tensor's current max-abs at every forward pass.
    #[default]
    RunningMaxAbs,
}

fn eight() -> u32 {
    8
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantSpec {
    #[serde(default = "eight")]
    pub bits: u32,
    #[serde(default)]
    pub scheme: QuantScheme,
    #[serde(default)]
    pub range_source: RangeSource,
}

impl Default for QuantSpec {
    fn default() -> Self {
        QuantSpec { bits: 8, scheme: QuantScheme::default(), range_source: RangeSource::default() }
    }
}

impl QuantSpec {
    pub fn validate(&self) -> Result<()> {
        if !(2..=16).contains(&self.bits) {
            return Err(Error::Config(format!("quantization bits {} outside [2, 16]", self.bits)));
        }
        Ok(())
    }
}

/// Largest representable level, `2^(b−1) − 1`.
pub fn quant_levels(bits: u32) -> f64 {
    ((1u32 << (bits - 1)) - 1) as f64
}

/// Per-tensor scale `maxabs/(2^(b−1)−1)`; 1 for an all-zero tensor.
pub fn quant_scale(values: &[f64], bits: u32) -> f64 {
    let maxabs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if maxabs == 0.0 {
        1.0
    } else {
        maxabs / quant_levels(bits)
    }
}

/// `clamp(round(θ/s), −L, L)·s` elementwise with the given scale.
pub fn quantize_with_scale(values: &[f64], bits: u32, s: f64) -> Vec<f64> {
    let l = quant_levels(bits);
    values.iter().map(|v| (v / s).round().clamp(-l, l) * s).collect()
}

/// Fake-quantizes one tensor with its own max-abs scale.
pub fn quantize(values: &[f64], bits: u32) -> Vec<f64> {
    quantize_with_scale(values, bits, quant_scale(values, bits))
}

/// Fake-quantizes every segment of a flat parameter vector independently.
pub fn quantize_params(w: &[f64], segments: &[Segment], bits: u32) -> Vec<f64> {
    let mut out = Vec::with_capacity(w.len());
    for s in segments {
        out.extend(quantize(&w[s.range()], bits));
    }
    out
}

/// Forward passes on fake-quantized weights; gradients pass straight
/// through to the latent full-precision parameters.
pub struct QuantizedModel {
    base: Model,
    spec: QuantSpec,
}

impl QuantizedModel {
    pub fn new(base: Model, spec: QuantSpec) -> Result<Self> {
        spec.validate()?;
        Ok(QuantizedModel { base, spec })
    }

    pub fn base(&self) -> &Model {
        &self.base
    }

    pub fn quantized(&self, w: &[f64]) -> Vec<f64> {
        quantize_params(w, self.base.params().segments(), self.spec.bits)
    }
}

impl Objective for QuantizedModel {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn segments(&self) -> Vec<Segment> {
        self.base.segments()
    }

    fn initial_params(&self) -> Vec<f64> {
        self.base.initial_params()
    }

    fn loss_grad(
        &self,
        w: &[f64],
        inputs: &Tensor<f64>,
        labels: &[usize],
        label_smoothing: f64,
        precision: Precision,
    ) -> Result<Evaluation> {
        self.base.loss_grad(&self.quantized(w), inputs, labels, label_smoothing, precision)
    }

    fn logits(&self, w: &[f64], inputs: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.base.logits(&self.quantized(w), inputs)
    }

    fn bits_per_param(&self) -> u32 {
        self.spec.bits
    }

    fn curvature_view(&self, w: &[f64]) -> Option<(&dyn Objective, Vec<f64>)> {
        Some((&self.base, self.quantized(w)))
    }
}

/// Quantization-aware training of `model` under `cfg`.
pub fn quantized_train(model: Model, ds: &Dataset, quant: QuantSpec, cfg: &TrainConfig) -> Result<TrainReport> {
    train(&QuantizedModel::new(model, quant)?, ds, cfg)
}

/// Reparameterization applied to every model of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Reparam {
    #[default]
    None,
    Subspace(SubspaceSpec),
    Quantized(QuantSpec),
}

impl Reparam {
    pub fn validate(&self) -> Result<()> {
        match self {
            Reparam::None => Ok(()),
            Reparam::Subspace(s) if s.dim < 1 => Err(Error::Config("subspace dim must be >= 1".into())),
            Reparam::Subspace(_) => Ok(()),
            Reparam::Quantized(q) => q.validate(),
        }
    }

    /// Wraps `model`, deriving any projection seed from `seed`.
    pub fn wrap(&self, model: Model, seed: u64) -> Result<Box<dyn Objective>> {
        Ok(match *self {
            Reparam::None => Box::new(model),
            Reparam::Subspace(s) => {
                let s = SubspaceSpec { seed: seed::derive(s.seed, &[seed]), ..s };
                Box::new(SubspaceModel::new(model, &s)?)
            }
            Reparam::Quantized(q) => Box::new(QuantizedModel::new(model, q)?),
        })
    }

    /// Bit count of the trainable state for a model of `param_count` scalars.
    pub fn effective_bits(&self, param_count: usize) -> u64 {
        match self {
            Reparam::None => 32 * param_count as u64,
            Reparam::Subspace(s) => 32 * s.dim as u64,
            Reparam::Quantized(q) => q.bits as u64 * param_count as u64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_quantizes_to_zero() {
        assert_eq!(quantize(&[0.0, 0.0], 8), vec![0.0, 0.0]);
        assert_eq!(quant_scale(&[0.0; 3], 8), 1.0);
        assert_eq!(quantize_with_scale(&[0.0], 4, 0.37), vec![0.0]);
    }

    #[test]
    fn rounding_error_is_half_a_step() {
        let v: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 / 7.0 - 7.0).collect();
        for bits in [2, 4, 8, 16] {
            let s = quant_scale(&v, bits);
            let q = quantize(&v, bits);
            assert!(v.iter().zip(&q).all(|(a, b)| (a - b).abs() <= s / 2.0 * (1.0 + 1e-12)));
            assert!(q.iter().all(|x| x.abs() <= quant_levels(bits) * s * (1.0 + 1e-12)));
        }
    }

    #[test]
    fn bit_parity() {
        let n = 1000;
        assert_eq!(Reparam::None.effective_bits(n), 32 * n as u64);
        let q = Reparam::Quantized(QuantSpec::default());
        assert_eq!(q.effective_bits(4 * n), Reparam::None.effective_bits(n));
        let s = Reparam::Subspace(SubspaceSpec { dim: 10, seed: 0, scale: None, orthonormalize: false });
        assert_eq!(s.effective_bits(123_456), 320);
    }

    #[test]
    fn bits_outside_range_rejected() {
        assert!(QuantSpec { bits: 1, ..QuantSpec::default() }.validate().is_err());
        assert!(QuantSpec { bits: 17, ..QuantSpec::default() }.validate().is_err());
    }
}
