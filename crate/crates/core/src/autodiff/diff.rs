use super::params::{unflatten, ParamVector};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Evaluates `loss_fn` on a fresh tape with one leaf per parameter segment and
/// returns the loss together with its gradient in the same layout.
pub fn grad<F>(params: &ParamVector, loss_fn: F) -> Result<(f64, ParamVector)>
where
    F: FnOnce(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaves: Vec<Var> = unflatten::<f64>(params.values(), params.segments())
        .into_iter()
        .map(|t| tape.leaf(t))
        .collect();
    let loss = loss_fn(&mut tape, &leaves)?;
    let value = tape.value(loss);
    if value.len() != 1 {
        return Err(Error::shape("grad", format!("loss has shape {:?}", value.shape())));
    }
    let value = value.data()[0];
    let grads = tape.backward(loss)?;
    let tensors: Vec<Tensor<f64>> = leaves.iter().map(|&v| grads.wrt(v)).collect();
    let g = ParamVector::flatten(params.segments().to_vec(), &tensors)?;
    Ok((value, g))
}

/// Default finite-difference step for [`hvp`]: `1e-4 · (1 + |θ|∞)`.
pub fn default_hvp_epsilon(params: &[f64]) -> f64 {
    1e-4 * (1.0 + inf_norm(params))
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Hessian-vector product by a symmetric difference of gradients along the
/// unit direction `u = v/|v|`, rescaled by `|v|`:
/// `Hv ≈ |v| · (∇L(θ+εu) − ∇L(θ−εu)) / 2ε`.
pub fn hvp<G>(mut grad_fn: G, params: &[f64], v: &[f64], epsilon: f64) -> Result<Vec<f64>>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if v.len() != params.len() {
        return Err(Error::shape("hvp", format!("direction has {} entries, params {}", v.len(), params.len())));
    }
    let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(vnorm >= 1e-12) {
        return Err(Error::InvalidArgument(format!("hvp direction norm {vnorm:e} is below 1e-12")));
    }
    let scale = inf_norm(params);
    if !(epsilon > 0.0) || !epsilon.is_finite() || epsilon <= scale * f64::EPSILON {
        return Err(Error::InvalidArgument(format!(
            "hvp epsilon {epsilon:e} underflows against |theta|_inf = {scale:e}"
        )));
    }
    let step: Vec<f64> = v.iter().map(|x| epsilon * x / vnorm).collect();
    let plus: Vec<f64> = params.iter().zip(&step).map(|(p, s)| p + s).collect();
    let minus: Vec<f64> = params.iter().zip(&step).map(|(p, s)| p - s).collect();
    let gp = grad_fn(&plus)?;
    let gm = grad_fn(&minus)?;
    let factor = vnorm / (2.0 * epsilon);
    let out: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) * factor).collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { op: "hvp" });
    }
    Ok(out)
}
