use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Location of one named tensor inside a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub layer: String,
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    /// Matrix view used by the Kronecker-factored preconditioner: vectors are
    /// `1×n`, higher-rank tensors are `shape[0] × rest`.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => (self.shape[0], self.shape[1..].iter().product()),
        }
    }
}

/// Flat parameter vector plus the table mapping (layer, name) to its slices.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    segments: Vec<Segment>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, segments: Vec<Segment>) -> Result<Self> {
        let mut expect = 0;
        for s in &segments {
            if s.offset != expect {
                return Err(Error::InvalidArgument(format!(
                    "segment {}.{} starts at {} but previous ended at {expect}",
                    s.layer, s.name, s.offset
                )));
            }
            expect += s.len();
        }
        if expect != values.len() {
            return Err(Error::InvalidArgument(format!(
                "segments cover {expect} values, vector has {}",
                values.len()
            )));
        }
        Ok(ParamVector { values, segments })
    }

    /// A single unnamed segment covering the whole vector.
    pub fn flat(values: Vec<f64>) -> Self {
        let n = values.len();
        ParamVector {
            values,
            segments: vec![Segment { layer: "flat".into(), name: "theta".into(), offset: 0, shape: vec![n] }],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        ParamVector::new(values, self.segments.clone())
    }

    pub fn segment(&self, layer: &str, name: &str) -> Option<&[f64]> {
        self.segments
            .iter()
            .find(|s| s.layer == layer && s.name == name)
            .map(|s| &self.values[s.range()])
    }

    pub fn unflatten(&self) -> Vec<Tensor<f64>> {
        unflatten(&self.values, &self.segments)
    }

    pub fn flatten(segments: Vec<Segment>, tensors: &[Tensor<f64>]) -> Result<Self> {
        if segments.len() != tensors.len() {
            return Err(Error::InvalidArgument(format!(
                "{} segments but {} tensors",
                segments.len(),
                tensors.len()
            )));
        }
        let mut values = Vec::new();
        for (s, t) in segments.iter().zip(tensors) {
            if s.shape != t.shape() {
                return Err(Error::shape("flatten", format!("{}.{}: {:?} vs {:?}", s.layer, s.name, s.shape, t.shape())));
            }
            values.extend_from_slice(t.data());
        }
        ParamVector::new(values, segments)
    }
}

pub(crate) fn unflatten<T: super::Real>(values: &[f64], segments: &[Segment]) -> Vec<Tensor<T>> {
    segments
        .iter()
        .map(|s| {
            let data = values[s.range()].iter().map(|&v| T::from_f64(v)).collect();
            Tensor::new(s.shape.clone(), data).expect("segment shape covers its range")
        })
        .collect()
}
