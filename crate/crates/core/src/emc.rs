//! The EMC search: grow the training-set size until certified perfect
//! fitting fails, resampling data and re-initializing at every probe.

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::converge::{verify, ConvergenceCriteria, ConvergenceReport};
use crate::data::{subsample, Dataset, SubsetSampler};
use crate::error::{Error, Result};
use crate::models::{build, ModelSpec};
use crate::optim::{train, TrainConfig};
use crate::reparam::Reparam;
use crate::seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Growth {
    #[default]
    DoubleThenBisect,
    Linear { step: usize },
}

fn one() -> f64 {
    1.0
}
fn three() -> usize {
    3
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EMCConfig {
    pub start_n: usize,
    #[serde(default)]
    pub growth: Growth,
    #[serde(default = "one")]
    pub fit_threshold: f64,
    #[serde(default = "three")]
    pub retry_seeds: usize,
    /// Defaults to the dataset size.
    #[serde(default)]
    pub max_n: Option<usize>,
    #[serde(default)]
    pub trial_seed_base: u64,
}

impl EMCConfig {
    pub fn new(start_n: usize) -> Self {
        EMCConfig { start_n, growth: Growth::default(), fit_threshold: 1.0, retry_seeds: 3, max_n: None, trial_seed_base: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.start_n < 1 {
            return Err(Error::Config("start_n must be >= 1".into()));
        }
        if !(self.fit_threshold > 0.0 && self.fit_threshold <= 1.0) {
            return Err(Error::Config(format!("fit_threshold {} must lie in (0, 1]", self.fit_threshold)));
        }
        if let Growth::Linear { step: 0 } = self.growth {
            return Err(Error::Config("linear growth step must be >= 1".into()));
        }
        if let Some(m) = self.max_n {
            if m < self.start_n {
                return Err(Error::Config(format!("max_n {m} is below start_n {}", self.start_n)));
            }
        }
        Ok(())
    }
}

/// One (subsample, re-initialize, train, verify) attempt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub seed: u64,
    pub fit: bool,
    pub final_accuracy: f64,
    pub epochs_run: usize,
    /// Absent when the fit threshold was not reached.
    pub report: Option<ConvergenceReport>,
    /// Training failure such as divergence.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub n: usize,
    /// True iff any attempt fit.
    pub fit: bool,
    pub attempts: Vec<ProbeOutcome>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EMCResult {
    /// Largest certified-fit size; 0 when even `start_n` failed.
    pub emc: usize,
    /// Every probed size up to `max_n` fit.
    pub saturated: bool,
    /// `start_n` failed on every attempt.
    pub below_start: bool,
    pub trace: Vec<TraceEntry>,
    /// The configuration with `max_n` resolved.
    pub config: EMCConfig,
}

/// Seed of attempt `attempt` at size `n`.
pub fn attempt_seed(base: u64, n: usize, attempt: usize) -> u64 {
    seed::derive(base, &[n as u64, attempt as u64])
}

/// Search driven by an arbitrary probe `(n, seed) -> outcome`. Each size is
/// attempted up to `1 + retry_seeds` times and fits if any attempt fits.
pub fn search_with<P>(cfg: &EMCConfig, max_n: usize, mut probe: P) -> Result<EMCResult>
where
    P: FnMut(usize, u64) -> Result<ProbeOutcome>,
{
    cfg.validate()?;
    if cfg.start_n > max_n {
        return Err(Error::Config(format!("start_n {} exceeds max_n {max_n}", cfg.start_n)));
    }
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut attempt = |n: usize, trace: &mut Vec<TraceEntry>| -> Result<bool> {
        let mut attempts = Vec::with_capacity(cfg.retry_seeds + 1);
        let mut fit = false;
        for a in 0..=cfg.retry_seeds {
            let out = probe(n, attempt_seed(cfg.trial_seed_base, n, a))?;
            fit = out.fit;
            attempts.push(out);
            if fit {
                break;
            }
        }
        debug!("probe n={n}: fit={fit} after {} attempt(s)", attempts.len());
        trace.push(TraceEntry { n, fit, attempts });
        Ok(fit)
    };

    let config = EMCConfig { max_n: Some(max_n), ..*cfg };
    let done = |emc: usize, trace: Vec<TraceEntry>| {
        Ok(EMCResult { emc, saturated: emc == max_n, below_start: emc == 0, trace, config })
    };

    if !attempt(cfg.start_n, &mut trace)? {
        return done(0, trace);
    }
    let mut lo = cfg.start_n;
    match cfg.growth {
        Growth::Linear { step } => {
            while lo < max_n {
                let n = (lo + step).min(max_n);
                if !attempt(n, &mut trace)? {
                    break;
                }
                lo = n;
            }
        }
        Growth::DoubleThenBisect => {
            let mut hi = None;
            while lo < max_n {
                let n = lo.saturating_mul(2).min(max_n);
                if attempt(n, &mut trace)? {
                    lo = n;
                } else {
                    hi = Some(n);
                    break;
                }
            }
            if let Some(mut hi) = hi {
                while hi - lo > 1 {
                    let mid = lo + (hi - lo) / 2;
                    if attempt(mid, &mut trace)? {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
            }
        }
    }
    done(lo, trace)
}

/// Everything a probe needs beyond `n` and its seed.
#[derive(Clone, Copy, Debug)]
pub struct ProbeSetup<'a> {
    pub spec: &'a ModelSpec,
    pub ds: &'a Dataset,
    pub train: &'a TrainConfig,
    pub fit_threshold: f64,
    pub reparam: &'a Reparam,
}

/// Draws `n` rows, builds a fresh model, trains and verifies. Training
/// failures count as `fit = false` and are recorded in the outcome.
pub fn probe(setup: &ProbeSetup<'_>, n: usize, seed_: u64) -> Result<ProbeOutcome> {
    let subset = subsample(setup.ds, SubsetSampler { n, seed: seed::derive_str(seed_, "subset") })?;
    let spec = ModelSpec { init_seed: seed::derive_str(seed_, "init"), ..*setup.spec };
    let obj = setup.reparam.wrap(build(&spec)?, seed::derive_str(seed_, "reparam"))?;
    let mut cfg = *setup.train;
    cfg.optimizer.seed = seed::derive(cfg.optimizer.seed, &[seed_]);
    cfg.target_accuracy = setup.fit_threshold;
    let report = match train(obj.as_ref(), &subset, &cfg) {
        Ok(r) => r,
        Err(e @ (Error::Divergence { .. } | Error::NonFiniteLoss { .. })) => {
            return Ok(ProbeOutcome {
                seed: seed_,
                fit: false,
                final_accuracy: 0.0,
                epochs_run: 0,
                report: None,
                error: Some(e.to_string()),
            })
        }
        Err(e) => return Err(e),
    };
    let acc = report.final_train_accuracy;
    let cert = match report.certificate {
        Some(c) => Some(c),
        None if acc >= setup.fit_threshold => Some(verify(
            obj.as_ref(),
            report.final_params.values(),
            &subset,
            &report.loss_history,
            &cfg.loss_config(),
            &cfg.convergence,
        )?),
        None => None,
    };
    let fit = acc >= setup.fit_threshold && cert.as_ref().is_some_and(|c| c.is_minimum);
    Ok(ProbeOutcome { seed: seed_, fit, final_accuracy: acc, epochs_run: report.epochs_run, report: cert, error: None })
}

/// Calibrates the gradient-norm threshold as 10× the median gradient norm of
/// certified fits with the gradient check disabled. Starts at `n` samples and
/// halves the size until some of `seeds` attempts certify.
pub fn calibrate_grad_threshold(setup: &ProbeSetup<'_>, n: usize, seeds: usize, base_seed: u64) -> Result<f64> {
    let mut cfg = *setup.train;
    cfg.convergence.grad_norm_threshold = Some(f64::INFINITY);
    let cal = ProbeSetup { train: &cfg, ..*setup };
    let mut size = n.max(1);
    loop {
        let mut norms = Vec::new();
        for s in 0..seeds.max(1) {
            let out = probe(&cal, size, seed::derive(base_seed, &[u64::MAX, size as u64, s as u64]))?;
            if let (true, Some(r)) = (out.fit, out.report) {
                norms.push(r.grad_norm);
            }
        }
        if !norms.is_empty() {
            norms.sort_by(f64::total_cmp);
            let mid = norms.len() / 2;
            let median = if norms.len() % 2 == 1 { norms[mid] } else { 0.5 * (norms[mid - 1] + norms[mid]) };
            debug!("calibration at n={size}: norms {norms:?}");
            return Ok(10.0 * median.max(f64::MIN_POSITIVE));
        }
        if size == 1 {
            return Err(Error::Config(format!("gradient threshold calibration found no certified fit at n <= {n}")));
        }
        size /= 2;
    }
}

/// Measures the EMC of `spec` on `ds`. An unset gradient threshold is
/// calibrated first at `start_n`.
pub fn search(
    spec: &ModelSpec,
    ds: &Dataset,
    emc_cfg: &EMCConfig,
    train_cfg: &TrainConfig,
    reparam: &Reparam,
) -> Result<(EMCResult, ConvergenceCriteria)> {
    let max_n = emc_cfg.max_n.unwrap_or(ds.len());
    if max_n > ds.len() {
        return Err(Error::Config(format!("max_n {max_n} exceeds dataset size {}", ds.len())));
    }
    let mut cfg = *train_cfg;
    let setup = ProbeSetup { spec, ds, train: train_cfg, fit_threshold: emc_cfg.fit_threshold, reparam };
    if cfg.convergence.grad_norm_threshold.is_none() {
        let t = calibrate_grad_threshold(&setup, emc_cfg.start_n.min(max_n), 3, emc_cfg.trial_seed_base)?;
        info!("calibrated gradient-norm threshold {t:e}");
        cfg.convergence.grad_norm_threshold = Some(t);
    }
    let setup = ProbeSetup { train: &cfg, ..setup };
    let result = search_with(emc_cfg, max_n, |n, s| probe(&setup, n, s))?;
    Ok((result, cfg.convergence))
}

/// Mean of `log₁₀(emc)`.
pub fn avg_log_emc(results: &[EMCResult]) -> Result<f64> {
    let values: Vec<usize> = results.iter().map(|r| r.emc).collect();
    avg_log10(&values)
}

pub fn avg_log10(values: &[usize]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("average of an empty list".into()));
    }
    if values.contains(&0) {
        return Err(Error::InvalidArgument("log of an EMC of 0".into()));
    }
    Ok(values.iter().map(|&v| (v as f64).log10()).sum::<f64>() / values.len() as f64)
}
