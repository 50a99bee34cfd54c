//! Optimizers, regularizers, the learning-rate schedule, the training loop
//! and the hyperparameter grid search.

mod shampoo;
mod tune;

use log::debug;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamVector, Segment};
use crate::converge::{full_gradient_norm, norm, verify, ConvergenceCriteria, ConvergenceReport};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::objective::{accuracy, LossConfig, Objective, Precision};
use crate::seed;

pub use shampoo::{inverse_fourth_root, ShampooState, SHAMPOO_MAX_DIM};
pub use tune::{tune, TuneGrid};

pub const ADAM_EPS: f64 = 1e-8;
pub const DIVERGENCE_LOSS: f64 = 1e6;
const MAX_BACKOFF_DOUBLINGS: u32 = 3;
/// Suggested perturbation radius when SAM is switched on without one.
pub const DEFAULT_SAM_RHO: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Gd,
    Adam,
    Adamw,
    Shampoo,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    #[default]
    Constant,
    Cosine { lr_min: f64 },
}

impl Schedule {
    /// Learning rate for epoch `t` of `total`.
    pub fn lr(&self, lr_max: f64, t: usize, total: usize) -> f64 {
        match *self {
            Schedule::Constant => lr_max,
            Schedule::Cosine { lr_min } => cosine_lr(t as f64, total as f64, lr_max, lr_min),
        }
    }
}

/// `lr_min + ½(lr_max − lr_min)(1 + cos(πt/T))`.
pub fn cosine_lr(t: f64, total: f64, lr_max: f64, lr_min: f64) -> f64 {
    let frac = if total > 0.0 { (t / total).clamp(0.0, 1.0) } else { 1.0 };
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

fn default_batch() -> usize {
    64
}
fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}
fn default_update_every() -> usize {
    20
}
fn default_damping() -> f64 {
    1e-6
}
fn default_max_epochs() -> usize {
    2000
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Ignored by `gd`, which always uses the whole dataset.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_update_every")]
    pub shampoo_update_every: usize,
    #[serde(default = "default_damping")]
    pub shampoo_damping: f64,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
}

impl OptimizerSpec {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        OptimizerSpec {
            kind,
            lr,
            batch_size: default_batch(),
            momentum: 0.0,
            betas: default_betas(),
            weight_decay: 0.0,
            shampoo_update_every: default_update_every(),
            shampoo_damping: default_damping(),
            schedule: Schedule::Constant,
            max_epochs: default_max_epochs(),
            seed: 0,
            precision: Precision::F64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if self.max_epochs < 1 {
            return bad("max_epochs must be >= 1".into());
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return bad(format!("betas {:?} must lie in [0, 1)", self.betas));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} must lie in [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if self.shampoo_update_every < 1 || !(self.shampoo_damping > 0.0) {
            return bad("shampoo_update_every must be >= 1 and shampoo_damping > 0".into());
        }
        if let Schedule::Cosine { lr_min } = self.schedule {
            if !(lr_min >= 0.0) || lr_min > self.lr {
                return bad(format!("cosine lr_min {lr_min} must lie in [0, lr]"));
            }
        }
        Ok(())
    }

    /// Coefficient of the L2 term the certificates see.
    pub fn l2(&self) -> f64 {
        self.weight_decay
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizerSpec {
    /// SAM neighbourhood radius; 0 disables SAM.
    pub sam_rho: f64,
    pub label_smoothing: f64,
}

impl RegularizerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sam_rho >= 0.0) || !self.sam_rho.is_finite() {
            return Err(Error::Config(format!("sam_rho {} must be >= 0", self.sam_rho)));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!("label_smoothing {} must lie in [0, 1)", self.label_smoothing)));
        }
        Ok(())
    }
}

fn yes() -> bool {
    true
}
fn one() -> f64 {
    1.0
}

/// Everything the training loop needs besides the model and data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub regularizer: RegularizerSpec,
    #[serde(default)]
    pub convergence: ConvergenceCriteria,
    /// Training accuracy required before certificates are attempted.
    #[serde(default = "one")]
    pub target_accuracy: f64,
    /// Stop as soon as the target accuracy is reached and certified.
    #[serde(default = "yes")]
    pub early_stop: bool,
}

impl TrainConfig {
    pub fn new(optimizer: OptimizerSpec) -> Self {
        TrainConfig {
            optimizer,
            regularizer: RegularizerSpec::default(),
            convergence: ConvergenceCriteria::default(),
            target_accuracy: 1.0,
            early_stop: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.regularizer.validate()?;
        self.convergence.validate()?;
        if !(self.target_accuracy > 0.0 && self.target_accuracy <= 1.0) {
            return Err(Error::Config(format!("target_accuracy {} must lie in (0, 1]", self.target_accuracy)));
        }
        Ok(())
    }

    /// The objective the certificates are evaluated against.
    pub fn loss_config(&self) -> LossConfig {
        LossConfig { label_smoothing: self.regularizer.label_smoothing, l2: self.optimizer.l2() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub final_train_accuracy: f64,
    /// Mean training objective per epoch.
    pub loss_history: Vec<f64>,
    pub epochs_run: usize,
    pub final_params: ParamVector,
    pub lr_trace: Vec<f64>,
    /// Set when training stopped on a passing certificate.
    pub certificate: Option<ConvergenceReport>,
}

/// `θ ← θ − lr·v` with `v ← μv + g + λθ`.
pub fn step_sgd(theta: &mut [f64], grad: &[f64], velocity: &mut [f64], lr: f64, momentum: f64, weight_decay: f64) {
    for ((t, &g), v) in theta.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        let g = g + weight_decay * *t;
        *v = momentum * *v + g;
        *t -= lr * *v;
    }
}

/// Full-batch gradient descent: [`step_sgd`] without momentum.
pub fn step_gd(theta: &mut [f64], grad: &[f64], lr: f64, weight_decay: f64) {
    for (t, &g) in theta.iter_mut().zip(grad) {
        let g = g + weight_decay * *t;
        *t -= lr * g;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u32,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState { m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }
}

fn adam_update(theta: &mut [f64], grad: &[f64], s: &mut AdamState, lr: f64, betas: (f64, f64), coupled_decay: f64) {
    let (b1, b2) = betas;
    s.t += 1;
    let c1 = 1.0 - b1.powi(s.t as i32);
    let c2 = 1.0 - b2.powi(s.t as i32);
    for (i, t) in theta.iter_mut().enumerate() {
        let g = grad[i] + coupled_decay * *t;
        s.m[i] = b1 * s.m[i] + (1.0 - b1) * g;
        s.v[i] = b2 * s.v[i] + (1.0 - b2) * g * g;
        let mhat = s.m[i] / c1;
        let vhat = s.v[i] / c2;
        *t -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
    }
}

/// Adam with L2 weight decay folded into the gradient.
pub fn step_adam(theta: &mut [f64], grad: &[f64], s: &mut AdamState, lr: f64, betas: (f64, f64), weight_decay: f64) {
    adam_update(theta, grad, s, lr, betas, weight_decay);
}

/// Adam with decoupled decay: `θ ← θ − lr·λ·θ`, then the adaptive step.
pub fn step_adamw(theta: &mut [f64], grad: &[f64], s: &mut AdamState, lr: f64, betas: (f64, f64), weight_decay: f64) {
    for t in theta.iter_mut() {
        *t -= lr * weight_decay * *t;
    }
    adam_update(theta, grad, s, lr, betas, 0.0);
}

enum State {
    Sgd(Vec<f64>),
    Gd,
    Adam(AdamState),
    Shampoo(ShampooState),
}

/// One optimizer instance bound to a parameter layout.
pub struct Optimizer {
    spec: OptimizerSpec,
    state: State,
}

impl Optimizer {
    pub fn new(spec: &OptimizerSpec, segments: &[Segment]) -> Self {
        let dim = segments.iter().map(Segment::len).sum();
        let state = match spec.kind {
            OptimizerKind::Sgd => State::Sgd(vec![0.0; dim]),
            OptimizerKind::Gd => State::Gd,
            OptimizerKind::Adam | OptimizerKind::Adamw => State::Adam(AdamState::new(dim)),
            OptimizerKind::Shampoo => {
                State::Shampoo(ShampooState::new(segments, spec.shampoo_damping, spec.shampoo_update_every))
            }
        };
        Optimizer { spec: *spec, state }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        let s = &self.spec;
        match &mut self.state {
            State::Sgd(v) => step_sgd(theta, grad, v, lr, s.momentum, s.weight_decay),
            State::Gd => step_gd(theta, grad, lr, s.weight_decay),
            State::Adam(a) if s.kind == OptimizerKind::Adamw => step_adamw(theta, grad, a, lr, s.betas, s.weight_decay),
            State::Adam(a) => step_adam(theta, grad, a, lr, s.betas, s.weight_decay),
            State::Shampoo(sh) => sh.step(theta, grad, lr, s.weight_decay),
        }
    }

    pub fn shampoo(&self) -> Option<&ShampooState> {
        match &self.state {
            State::Shampoo(s) => Some(s),
            _ => None,
        }
    }
}

/// Sharpness-aware gradient: the gradient at `θ + ρ·g/|g|`, where `g` is
/// the gradient at `θ`. Falls back to `g` when `ρ = 0` or `|g| = 0`.
pub fn sam_gradient<F>(mut grad_fn: F, theta: &[f64], g: Vec<f64>, rho: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let gn = norm(&g);
    if rho == 0.0 || gn == 0.0 {
        return Ok(g);
    }
    let perturbed: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t + rho * gi / gn).collect();
    grad_fn(&perturbed)
}

fn tag_step_error(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::NonFiniteLoss { epoch, step },
        other => other,
    }
}

/// Mini-batch training from `obj.initial_params()`.
pub fn train(obj: &dyn Objective, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Dataset("cannot train on an empty dataset".into()));
    }
    let opt = &cfg.optimizer;
    let reg = &cfg.regularizer;
    let n = ds.len();
    let batch = if opt.kind == OptimizerKind::Gd { n } else { opt.batch_size.min(n) };
    let segments = obj.segments();
    let mut optimizer = Optimizer::new(opt, &segments);
    let mut w = obj.initial_params();
    let mut rng = seed::rng(seed::derive_str(opt.seed, "shuffle"));
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_history = Vec::with_capacity(opt.max_epochs.min(4096));
    let mut lr_trace = Vec::with_capacity(opt.max_epochs.min(4096));
    let mut certificate = None;
    let mut next_check = 0;
    let mut failed_checks = 0u32;
    let criteria = &cfg.convergence;
    let loss_cfg = cfg.loss_config();

    for epoch in 0..opt.max_epochs {
        let lr = opt.schedule.lr(opt.lr, epoch, opt.max_epochs);
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for (step, chunk) in order.chunks(batch).enumerate() {
            let mut rows = chunk.to_vec();
            rows.sort_unstable();
            let x = ds.inputs().select_rows(&rows);
            let y: Vec<usize> = rows.iter().map(|&r| ds.labels()[r]).collect();
            let ev = obj
                .loss_grad(&w, &x, &y, reg.label_smoothing, opt.precision)
                .map_err(|e| tag_step_error(e, epoch, step))?;
            if !ev.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            if ev.loss > DIVERGENCE_LOSS {
                return Err(Error::Divergence { epoch, step, loss: ev.loss });
            }
            loss_sum += ev.loss * rows.len() as f64;
            let g = if reg.sam_rho > 0.0 {
                let grad_at = |p: &[f64]| obj.loss_grad(p, &x, &y, reg.label_smoothing, opt.precision).map(|e| e.grad);
                sam_gradient(grad_at, &w, ev.grad, reg.sam_rho).map_err(|e| tag_step_error(e, epoch, step))?
            } else {
                ev.grad
            };
            optimizer.step(&mut w, &g, lr);
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
        }
        let penalty = 0.5 * loss_cfg.l2 * w.iter().map(|v| v * v).sum::<f64>();
        loss_history.push(loss_sum / n as f64 + penalty);
        lr_trace.push(lr);

        if cfg.early_stop && epoch >= next_check && criteria.plateau(&loss_history) {
            next_check = epoch + criteria.plateau_epochs;
            if accuracy(obj, &w, ds)? < cfg.target_accuracy {
                continue;
            }
            let threshold = criteria.grad_norm_threshold.unwrap_or(f64::INFINITY);
            if full_gradient_norm(obj, &w, ds, &loss_cfg)? > threshold {
                continue;
            }
            let resolved = ConvergenceCriteria { grad_norm_threshold: Some(threshold), ..*criteria };
            let report = verify(obj, &w, ds, &loss_history, &loss_cfg, &resolved)?;
            debug!("epoch {epoch}: certificate check {report:?}");
            if report.is_minimum {
                certificate = Some(report);
                break;
            }
            // Curvature checks cost many gradient passes; space repeats out.
            failed_checks += 1;
            next_check = epoch + criteria.plateau_epochs * (1 << failed_checks.min(MAX_BACKOFF_DOUBLINGS));
        }
    }

    let final_train_accuracy = accuracy(obj, &w, ds)?;
    let epochs_run = loss_history.len();
    Ok(TrainReport {
        final_train_accuracy,
        loss_history,
        epochs_run,
        final_params: ParamVector::new(w, segments)?,
        lr_trace,
        certificate,
    })
}
