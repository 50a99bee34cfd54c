//! Width/depth-parameterized architecture families with exact parameter
//! counting.
//!
//! Layer counting convention: `depth` counts hidden dense layers (mlp), conv
//! layers (cnn) or residual blocks (resnet_cnn). The classification head is
//! never counted.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{unflatten, ParamVector, Real, Segment, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::objective::{count_correct, Evaluation, Objective, Precision};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Mlp,
    Cnn,
    ResnetCnn,
    Linear,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

/// Shape of one input sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputShape {
    Features(usize),
    Image([usize; 3]),
}

impl InputShape {
    pub fn numel(&self) -> usize {
        match *self {
            InputShape::Features(f) => f,
            InputShape::Image([c, h, w]) => c * h * w,
        }
    }

    /// Interprets the per-sample dimensions of a dataset.
    pub fn from_sample_dims(dims: &[usize]) -> Result<Self> {
        match dims {
            [f] => Ok(InputShape::Features(*f)),
            [c, h, w] => Ok(InputShape::Image([*c, *h, *w])),
            other => Err(Error::InvalidSpec(format!("unsupported sample shape {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    pub input_shape: InputShape,
    pub num_classes: usize,
    pub width: usize,
    pub depth: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub init_seed: u64,
}

const KERNEL: usize = 3;

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 1 || self.depth < 1 {
            return Err(Error::InvalidSpec(format!("width {} and depth {} must be >= 1", self.width, self.depth)));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidSpec(format!("num_classes {} must be >= 2", self.num_classes)));
        }
        if self.input_shape.numel() == 0 {
            return Err(Error::InvalidSpec("input has zero elements".into()));
        }
        match (self.family, self.input_shape) {
            (Family::Cnn | Family::ResnetCnn, InputShape::Features(_)) => {
                Err(Error::InvalidSpec("convolutional families need a (channels, height, width) input".into()))
            }
            (Family::Cnn | Family::ResnetCnn, InputShape::Image(_)) => self.spatial_plan().map(|_| ()),
            _ => Ok(()),
        }
    }

    /// Number of conv stages that are followed by a 2× average pool.
    fn pooled_stages(&self) -> usize {
        self.depth / 2
    }

    /// Spatial size after each pooling step; errors if a pool would shrink a
    /// side below one pixel.
    fn spatial_plan(&self) -> Result<Vec<(usize, usize)>> {
        let InputShape::Image([_, mut h, mut w]) = self.input_shape else {
            return Ok(vec![]);
        };
        let mut plan = vec![(h, w)];
        for _ in 0..self.pooled_stages() {
            if h < 2 || w < 2 {
                return Err(Error::InvalidSpec(format!(
                    "spatial dims collapse below 1x1: {h}x{w} cannot be pooled (input {:?}, depth {})",
                    self.input_shape, self.depth
                )));
            }
            h /= 2;
            w /= 2;
            plan.push((h, w));
        }
        Ok(plan)
    }

    /// Closed-form count of trainable scalars, biases included.
    pub fn param_count(&self) -> usize {
        let (f, k, w, d) = (self.input_shape.numel(), self.num_classes, self.width, self.depth);
        let conv = |cin: usize, cout: usize| cout * cin * KERNEL * KERNEL + cout;
        match self.family {
            Family::Linear => f * k + k,
            Family::Mlp => (f * w + w) + (d - 1) * (w * w + w) + (w * k + k),
            Family::Cnn => {
                let c = self.channels();
                conv(c, w) + (d - 1) * conv(w, w) + (w * k + k)
            }
            Family::ResnetCnn => {
                let c = self.channels();
                conv(c, w) + d * 2 * conv(w, w) + (w * k + k)
            }
        }
    }

    fn channels(&self) -> usize {
        match self.input_shape {
            InputShape::Image([c, _, _]) => c,
            InputShape::Features(_) => 1,
        }
    }

    fn layout(&self) -> Vec<(Segment, usize)> {
        let mut out: Vec<(Segment, usize)> = Vec::new();
        let mut offset = 0;
        let mut push = |layer: String, name: &str, shape: Vec<usize>, fan_in: usize| {
            let s = Segment { layer, name: name.to_string(), offset, shape };
            offset += s.len();
            out.push((s, fan_in));
        };
        let (f, k, w) = (self.input_shape.numel(), self.num_classes, self.width);
        let conv_fan = |cin: usize| cin * KERNEL * KERNEL;
        match self.family {
            Family::Linear => {
                push("head".into(), "w", vec![f, k], f);
                push("head".into(), "b", vec![k], f);
            }
            Family::Mlp => {
                let mut fan = f;
                for i in 0..self.depth {
                    push(format!("hidden{i}"), "w", vec![fan, w], fan);
                    push(format!("hidden{i}"), "b", vec![w], fan);
                    fan = w;
                }
                push("head".into(), "w", vec![w, k], w);
                push("head".into(), "b", vec![k], w);
            }
            Family::Cnn => {
                let mut cin = self.channels();
                for i in 0..self.depth {
                    push(format!("conv{i}"), "w", vec![w, cin, KERNEL, KERNEL], conv_fan(cin));
                    push(format!("conv{i}"), "b", vec![w], conv_fan(cin));
                    cin = w;
                }
                push("head".into(), "w", vec![w, k], w);
                push("head".into(), "b", vec![k], w);
            }
            Family::ResnetCnn => {
                let c = self.channels();
                push("stem".into(), "w", vec![w, c, KERNEL, KERNEL], conv_fan(c));
                push("stem".into(), "b", vec![w], conv_fan(c));
                for i in 0..self.depth {
                    let layer = format!("block{i}");
                    push(layer.clone(), "w_a", vec![w, w, KERNEL, KERNEL], conv_fan(w));
                    push(layer.clone(), "b_a", vec![w], conv_fan(w));
                    push(layer.clone(), "w_b", vec![w, w, KERNEL, KERNEL], conv_fan(w));
                    push(layer, "b_b", vec![w], conv_fan(w));
                }
                push("head".into(), "w", vec![w, k], w);
                push("head".into(), "b", vec![k], w);
            }
        }
        out
    }

    pub fn with_width(mut self, width: usize) -> Self {
        self.width = width;
        self
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleAxis {
    Width,
    Depth,
}

/// Specs that differ from `spec` only along `axis`.
pub fn scale_series(spec: &ModelSpec, axis: ScaleAxis, values: &[usize]) -> Result<Vec<ModelSpec>> {
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!("scale values {values:?} must be strictly increasing")));
    }
    Ok(values
        .iter()
        .map(|&v| match axis {
            ScaleAxis::Width => spec.with_width(v),
            ScaleAxis::Depth => spec.with_depth(v),
        })
        .collect())
}

/// An instantiated network: spec, parameters and the forward program.
#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    params: ParamVector,
}

/// Fan-in-scaled uniform initialization from a seeded stream.
pub fn build(spec: &ModelSpec) -> Result<Model> {
    spec.validate()?;
    let layout = spec.layout();
    let mut rng = seed::rng(seed::derive_str(spec.init_seed, "init"));
    let mut values = Vec::with_capacity(spec.param_count());
    for (seg, fan_in) in &layout {
        let bound = (1.0 / *fan_in as f64).sqrt();
        for _ in 0..seg.len() {
            values.push(rng.random_range(-bound..bound));
        }
    }
    let params = ParamVector::new(values, layout.into_iter().map(|(s, _)| s).collect())?;
    Ok(Model { spec: *spec, params })
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn set_params(&mut self, values: Vec<f64>) -> Result<()> {
        self.params = self.params.with_values(values)?;
        Ok(())
    }

    fn activate<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        match self.spec.activation {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Identity => Ok(tape.identity(x)),
        }
    }

    fn conv_layer<T: Real>(&self, tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = tape.conv2d(x, w, 1, KERNEL / 2)?;
        tape.add_channel_bias(y, b)
    }

    /// Records the forward pass on `tape` and returns the `batch × classes`
    /// logits. `leaves` holds one variable per parameter segment in layout order.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, leaves: &[Var], x: Var) -> Result<Var> {
        let batch = tape.value(x).shape().first().copied().unwrap_or(0);
        let numel = self.spec.input_shape.numel();
        if tape.value(x).len() != batch * numel {
            return Err(Error::shape(
                "forward",
                format!("input {:?} does not match model input {:?}", tape.value(x).shape(), self.spec.input_shape),
            ));
        }
        let mut p = leaves.iter().copied();
        let mut next = || p.next().expect("leaf count matches layout");
        match self.spec.family {
            Family::Linear | Family::Mlp => {
                let mut h = tape.reshape(x, vec![batch, numel])?;
                let hidden = if self.spec.family == Family::Mlp { self.spec.depth } else { 0 };
                for _ in 0..hidden {
                    let (w, b) = (next(), next());
                    let z = tape.matmul(h, w)?;
                    let z = tape.add_bias(z, b)?;
                    h = self.activate(tape, z)?;
                }
                let (w, b) = (next(), next());
                let z = tape.matmul(h, w)?;
                tape.add_bias(z, b)
            }
            Family::Cnn | Family::ResnetCnn => {
                let InputShape::Image([c, hh, ww]) = self.spec.input_shape else {
                    unreachable!("validated at build")
                };
                let mut h = tape.reshape(x, vec![batch, c, hh, ww])?;
                if self.spec.family == Family::Cnn {
                    for i in 0..self.spec.depth {
                        let (w, b) = (next(), next());
                        let z = self.conv_layer(tape, h, w, b)?;
                        h = self.activate(tape, z)?;
                        if i % 2 == 1 {
                            h = tape.avg_pool2d(h, 2)?;
                        }
                    }
                } else {
                    let (w, b) = (next(), next());
                    let z = self.conv_layer(tape, h, w, b)?;
                    h = self.activate(tape, z)?;
                    for i in 0..self.spec.depth {
                        let (wa, ba, wb, bb) = (next(), next(), next(), next());
                        let r = self.conv_layer(tape, h, wa, ba)?;
                        let r = self.activate(tape, r)?;
                        let r = self.conv_layer(tape, r, wb, bb)?;
                        let s = tape.add(h, r)?;
                        h = self.activate(tape, s)?;
                        if i % 2 == 1 {
                            h = tape.avg_pool2d(h, 2)?;
                        }
                    }
                }
                let g = tape.global_avg_pool(h)?;
                let (w, b) = (next(), next());
                let z = tape.matmul(g, w)?;
                tape.add_bias(z, b)
            }
        }
    }

    /// Relu gates of a forward pass at `w`, in call order.
    fn relu_gates(&self, w: &[f64], inputs: &Tensor<f64>) -> Result<Vec<Vec<f64>>> {
        if w.len() != self.params.len() {
            return Err(Error::shape("forward", format!("{} parameters for a model of {}", w.len(), self.params.len())));
        }
        let mut tape = Tape::<f64>::new();
        let leaves: Vec<Var> = unflatten::<f64>(w, self.params.segments()).into_iter().map(|t| tape.leaf(t)).collect();
        let x = tape.constant(inputs.clone());
        self.forward(&mut tape, &leaves, x)?;
        Ok(tape.relu_gates())
    }

    fn run<T: Real>(
        &self,
        w: &[f64],
        inputs: &Tensor<f64>,
        labels: Option<(&[usize], f64)>,
        gates: Option<Vec<Vec<T>>>,
    ) -> Result<(Tensor<f64>, Option<(f64, Vec<f64>)>)> {
        if w.len() != self.params.len() {
            return Err(Error::shape("forward", format!("{} parameters for a model of {}", w.len(), self.params.len())));
        }
        let mut tape = match gates {
            Some(g) => Tape::<T>::with_relu_gates(g),
            None => Tape::<T>::new(),
        };
        let leaves: Vec<Var> = unflatten::<T>(w, self.params.segments()).into_iter().map(|t| tape.leaf(t)).collect();
        let x = tape.constant(inputs.cast::<T>());
        let logits = self.forward(&mut tape, &leaves, x)?;
        let logits_f64 = tape.value(logits).cast::<f64>();
        let Some((labels, smoothing)) = labels else {
            return Ok((logits_f64, None));
        };
        let loss = tape.softmax_cross_entropy(logits, labels, smoothing)?;
        let value = tape.value(loss).data()[0].to_f64();
        let grads = tape.backward(loss)?;
        let mut g = Vec::with_capacity(w.len());
        for &leaf in &leaves {
            g.extend(grads.wrt(leaf).data().iter().map(|v| v.to_f64()));
        }
        Ok((logits_f64, Some((value, g))))
    }
}

impl Objective for Model {
    fn dim(&self) -> usize {
        self.params.len()
    }

    fn segments(&self) -> Vec<Segment> {
        self.params.segments().to_vec()
    }

    fn initial_params(&self) -> Vec<f64> {
        self.params.values().to_vec()
    }

    fn loss_grad(
        &self,
        w: &[f64],
        inputs: &Tensor<f64>,
        labels: &[usize],
        label_smoothing: f64,
        precision: Precision,
    ) -> Result<Evaluation> {
        let (logits, lg) = match precision {
            Precision::F64 => self.run::<f64>(w, inputs, Some((labels, label_smoothing)), None)?,
            Precision::F32 => self.run::<f32>(w, inputs, Some((labels, label_smoothing)), None)?,
        };
        let (loss, grad) = lg.expect("labels supplied");
        Ok(Evaluation { loss, grad, correct: count_correct(&logits, labels), count: labels.len() })
    }

    fn logits(&self, w: &[f64], inputs: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(self.run::<f64>(w, inputs, None, None)?.0)
    }

    fn anchored_loss_grad(
        &self,
        anchor: &[f64],
        w: &[f64],
        inputs: &Tensor<f64>,
        labels: &[usize],
        label_smoothing: f64,
    ) -> Result<Evaluation> {
        let gates = match self.spec.activation {
            Activation::Relu => Some(self.relu_gates(anchor, inputs)?),
            _ => None,
        };
        let (logits, lg) = self.run::<f64>(w, inputs, Some((labels, label_smoothing)), gates)?;
        let (loss, grad) = lg.expect("labels supplied");
        Ok(Evaluation { loss, grad, correct: count_correct(&logits, labels), count: labels.len() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp(width: usize, depth: usize, features: usize, classes: usize) -> ModelSpec {
        ModelSpec {
            family: Family::Mlp,
            input_shape: InputShape::Features(features),
            num_classes: classes,
            width,
            depth,
            activation: Activation::Relu,
            init_seed: 7,
        }
    }

    fn cnn(family: Family, width: usize, depth: usize, hw: usize) -> ModelSpec {
        ModelSpec {
            family,
            input_shape: InputShape::Image([1, hw, hw]),
            num_classes: 2,
            width,
            depth,
            activation: Activation::Relu,
            init_seed: 3,
        }
    }

    #[test]
    fn closed_form_counts() {
        let lin = ModelSpec { family: Family::Linear, ..mlp(1, 1, 10, 2) };
        assert_eq!(lin.param_count(), 22);
        assert_eq!(mlp(8, 1, 4, 2).param_count(), 58);
    }

    #[test]
    fn count_matches_instantiated_layout() {
        let mut specs = vec![cnn(Family::Cnn, 4, 2, 8), cnn(Family::ResnetCnn, 3, 3, 8)];
        for d in 1..4 {
            for w in [1, 3, 8] {
                specs.push(mlp(w, d, 5, 3));
                specs.push(cnn(Family::Cnn, w, d, 8));
                specs.push(cnn(Family::ResnetCnn, w, d, 8));
            }
        }
        specs.push(ModelSpec { family: Family::Linear, ..mlp(1, 1, 7, 4) });
        for s in specs {
            assert_eq!(s.param_count(), build(&s).unwrap().params().len(), "{s:?}");
        }
    }

    #[test]
    fn conv_count_ignores_input_size() {
        for fam in [Family::Cnn, Family::ResnetCnn] {
            let counts: Vec<usize> = [16, 32, 64].iter().map(|&hw| cnn(fam, 4, 3, hw).param_count()).collect();
            assert!(counts.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn same_seed_same_params() {
        let s = mlp(6, 2, 4, 3);
        assert_eq!(build(&s).unwrap().params(), build(&s).unwrap().params());
        let other = ModelSpec { init_seed: 8, ..s };
        assert_ne!(build(&s).unwrap().params(), build(&other).unwrap().params());
    }

    #[test]
    fn mlp_logits_shape() {
        let m = build(&mlp(8, 1, 4, 2)).unwrap();
        let x = Tensor::new(vec![3, 4], (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let z = m.logits(m.params().values(), &x).unwrap();
        assert_eq!(z.shape(), &[3, 2]);
    }

    #[test]
    fn pooling_collapse_is_rejected() {
        let s = cnn(Family::Cnn, 2, 6, 4);
        assert!(matches!(build(&s), Err(Error::InvalidSpec(_))));
        assert!(build(&cnn(Family::Cnn, 2, 4, 4)).is_ok());
        let flat = ModelSpec { input_shape: InputShape::Features(16), ..cnn(Family::Cnn, 2, 2, 4) };
        assert!(build(&flat).is_err());
    }

    #[test]
    fn scale_series_varies_one_axis() {
        let base = cnn(Family::Cnn, 1, 2, 8);
        let ws = scale_series(&base, ScaleAxis::Width, &[2, 4, 8]).unwrap();
        let counts: Vec<usize> = ws.iter().map(|s| s.param_count()).collect();
        assert!(counts.windows(2).all(|w| w[0] < w[1]));
        let ds = scale_series(&mlp(4, 1, 3, 2), ScaleAxis::Depth, &[1, 2, 4]).unwrap();
        assert_eq!(ds.iter().map(|s| s.depth).collect::<Vec<_>>(), vec![1, 2, 4]);
        assert!(scale_series(&base, ScaleAxis::Width, &[4, 4]).is_err());
    }

    #[test]
    fn interior_conv_counts_grow_quadratically() {
        // Closed form: interior layers contribute 9w² + w each, so the
        // second difference of the count in w over an arithmetic grid is
        // 2·9·(depth-1)·Δ².
        let base = cnn(Family::Cnn, 1, 3, 8);
        let c: Vec<f64> = [4, 8, 12].iter().map(|&w| base.with_width(w).param_count() as f64).collect();
        let second = c[2] - 2.0 * c[1] + c[0];
        assert_eq!(second, 2.0 * 9.0 * 2.0 * 16.0);
        let r: Vec<f64> = [4usize, 8, 16].iter().map(|&w| base.with_width(w).param_count() as f64).collect();
        assert!(r[1] / r[0] > 3.0 && r[2] / r[1] > 3.5);
    }
}
