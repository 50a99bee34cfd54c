//! Minimum certificates: full-dataset gradient norm, loss plateau and the
//! smallest Hessian eigenvalue.

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{default_hvp_epsilon, hvp};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::objective::{full_evaluation, full_evaluation_at, LossConfig, Objective, EVAL_CHUNK};
use crate::seed;

pub const PLATEAU_REL_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceCriteria {
    /// `None` asks the EMC search to calibrate a value before probing.
    pub grad_norm_threshold: Option<f64>,
    pub plateau_epochs: usize,
    pub plateau_rel_tol: f64,
    /// Decreases smaller than this many loss units do not reset the plateau.
    pub plateau_abs_tol: f64,
    pub eig_threshold: f64,
    pub lanczos_iters: usize,
    pub lanczos_seed: u64,
    /// `None` uses `1e-4·(1+|θ|∞)`.
    pub hvp_epsilon: Option<f64>,
}

impl Default for ConvergenceCriteria {
    fn default() -> Self {
        ConvergenceCriteria {
            grad_norm_threshold: None,
            plateau_epochs: 10,
            plateau_rel_tol: PLATEAU_REL_TOL,
            plateau_abs_tol: 1e-5,
            eig_threshold: -1e-2,
            lanczos_iters: 40,
            lanczos_seed: 0,
            hvp_epsilon: None,
        }
    }
}

impl ConvergenceCriteria {
    pub fn validate(&self) -> Result<()> {
        if self.plateau_epochs < 1 {
            return Err(Error::Config("plateau_epochs must be >= 1".into()));
        }
        if self.lanczos_iters < 2 {
            return Err(Error::Config("lanczos_iters must be >= 2".into()));
        }
        if !(self.plateau_rel_tol >= 0.0) || !(self.plateau_abs_tol >= 0.0) {
            return Err(Error::Config("plateau tolerances must be non-negative".into()));
        }
        if let Some(t) = self.grad_norm_threshold {
            if !(t > 0.0) {
                return Err(Error::Config(format!("grad_norm_threshold {t} must be positive")));
            }
        }
        if let Some(e) = self.hvp_epsilon {
            if !(e > 0.0) {
                return Err(Error::Config(format!("hvp_epsilon {e} must be positive")));
            }
        }
        Ok(())
    }

    fn threshold(&self) -> Result<f64> {
        self.grad_norm_threshold
            .ok_or_else(|| Error::Config("grad_norm_threshold is unset; calibrate it first".into()))
    }

    pub fn plateau(&self, history: &[f64]) -> bool {
        plateau_with(history, self.plateau_epochs, self.plateau_rel_tol, self.plateau_abs_tol)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub grad_norm_threshold: f64,
    pub eig_threshold: f64,
    pub plateau_epochs: usize,
    pub lanczos_iterations: usize,
    /// `β_k·|s_k|` for the smallest Ritz pair.
    pub ritz_residual: f64,
    pub lanczos_breakdown: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub grad_norm: f64,
    pub grad_ok: bool,
    pub plateaued: bool,
    pub min_eig_estimate: f64,
    pub eig_ok: bool,
    pub is_minimum: bool,
    pub diagnostics: Diagnostics,
}

/// Euclidean norm of the mean gradient over all of `ds`, at 64-bit.
pub fn full_gradient_norm(obj: &dyn Objective, w: &[f64], ds: &Dataset, loss: &LossConfig) -> Result<f64> {
    let ev = full_evaluation(obj, w, ds, loss, EVAL_CHUNK)?;
    Ok(norm(&ev.grad))
}

/// [`plateau_with`] at the default relative tolerance and no absolute slack.
pub fn plateau(history: &[f64], plateau_epochs: usize) -> bool {
    plateau_with(history, plateau_epochs, PLATEAU_REL_TOL, 0.0)
}

/// True iff none of the last `k` entries falls below the minimum of the
/// entries before them by more than `rel·|min| + abs`.
pub fn plateau_with(history: &[f64], k: usize, rel: f64, abs: f64) -> bool {
    if k == 0 || history.len() <= k {
        return false;
    }
    let (before, window) = history.split_at(history.len() - k);
    let best = before.iter().copied().fold(f64::INFINITY, f64::min);
    let floor = best - rel * best.abs() - abs;
    window.iter().all(|&x| x >= floor)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LanczosResult {
    pub min_ritz: f64,
    pub iterations: usize,
    pub residual: f64,
    pub breakdown: bool,
}

/// Smallest Ritz value of a symmetric operator on `R^n` after at most
/// `iters` Lanczos steps with full reorthogonalization.
pub fn lanczos_min<F>(mut op: F, n: usize, iters: usize, seed: u64) -> Result<LanczosResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if n == 0 {
        return Err(Error::InvalidArgument("lanczos on an empty operator".into()));
    }
    let m = iters.min(n).max(1);
    let mut rng = seed::rng(seed::derive_str(seed, "lanczos"));
    let mut q: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let qn = norm(&q);
    q.iter_mut().for_each(|x| *x /= qn);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut alpha = Vec::with_capacity(m);
    let mut beta: Vec<f64> = Vec::with_capacity(m);
    let mut breakdown = false;
    for j in 0..m {
        let mut w = op(&q)?;
        if w.len() != n || w.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: "lanczos operator" });
        }
        let a = dot(&w, &q);
        alpha.push(a);
        axpy(&mut w, -a, &q);
        if let (Some(prev), Some(&b)) = (basis.last(), beta.last()) {
            axpy(&mut w, -b, prev);
        }
        basis.push(q);
        for _ in 0..2 {
            for v in &basis {
                let c = dot(&w, v);
                axpy(&mut w, -c, v);
            }
        }
        let b = norm(&w);
        let scale = alpha.iter().chain(&beta).fold(0.0f64, |s, x| s.max(x.abs())).max(f64::MIN_POSITIVE);
        beta.push(b);
        if j + 1 == m {
            break;
        }
        if b <= 1e-12 * scale {
            breakdown = true;
            break;
        }
        q = w.into_iter().map(|x| x / b).collect();
    }

    let k = alpha.len();
    let mut t = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let (idx, &min_ritz) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("at least one Ritz value");
    let residual = beta[k - 1].abs() * eig.eigenvectors[(k - 1, idx)].abs();
    Ok(LanczosResult { min_ritz, iterations: k, residual, breakdown })
}

/// Lanczos estimate of the smallest eigenvalue of the Hessian of the full
/// training objective at `w`, via finite-difference Hessian-vector products
/// taken with relu gates held at `w`.
pub fn min_hessian_eig(
    obj: &dyn Objective,
    w: &[f64],
    ds: &Dataset,
    loss: &LossConfig,
    criteria: &ConvergenceCriteria,
) -> Result<LanczosResult> {
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { op: "parameters" });
    }
    let view = obj.curvature_view(w);
    let (target, point): (&dyn Objective, Vec<f64>) = match view {
        Some((o, p)) => (o, p),
        None => (obj, w.to_vec()),
    };
    let eps = criteria.hvp_epsilon.unwrap_or_else(|| default_hvp_epsilon(&point));
    let anchor = point.clone();
    let grad_fn = |p: &[f64]| full_evaluation_at(target, Some(&anchor), p, ds, loss, EVAL_CHUNK).map(|e| e.grad);
    lanczos_min(|v| hvp(grad_fn, &point, v, eps), point.len(), criteria.lanczos_iters, criteria.lanczos_seed)
}

/// Evaluates all three certificates at `w`. Never mutates anything.
pub fn verify(
    obj: &dyn Objective,
    w: &[f64],
    ds: &Dataset,
    loss_history: &[f64],
    loss: &LossConfig,
    criteria: &ConvergenceCriteria,
) -> Result<ConvergenceReport> {
    let threshold = criteria.threshold()?;
    let grad_norm = full_gradient_norm(obj, w, ds, loss)?;
    let grad_ok = grad_norm <= threshold;
    let plateaued = criteria.plateau(loss_history);
    let eig = min_hessian_eig(obj, w, ds, loss, criteria)?;
    let eig_ok = eig.min_ritz >= criteria.eig_threshold;
    Ok(ConvergenceReport {
        grad_norm,
        grad_ok,
        plateaued,
        min_eig_estimate: eig.min_ritz,
        eig_ok,
        is_minimum: grad_ok && plateaued && eig_ok,
        diagnostics: Diagnostics {
            grad_norm_threshold: threshold,
            eig_threshold: criteria.eig_threshold,
            plateau_epochs: criteria.plateau_epochs,
            lanczos_iterations: eig.iterations,
            ritz_residual: eig.residual,
            lanczos_breakdown: eig.breakdown,
        },
    })
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
