use log::debug;
use serde::{Deserialize, Serialize};

use super::{train, OptimizerKind, OptimizerSpec, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{build, ModelSpec};

fn default_tune_epochs() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneGrid {
    pub batch_sizes: Vec<usize>,
    pub lrs: Vec<f64>,
    #[serde(default = "default_tune_epochs")]
    pub max_epochs_tune: usize,
}

/// `count` log-spaced points from `lo` to `hi` inclusive.
fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..count).map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64)).collect()
}

impl TuneGrid {
    /// Batch sizes {32, 64, 128, 256} no larger than `n` (or `n` itself when
    /// all are larger); learning rates log-spaced over [1e-3, 1e-2] (5) for
    /// SGD-like optimizers and over [1e-5, 1e-2] (7) for Adam-like ones.
    pub fn default_for(kind: OptimizerKind, n: usize) -> Self {
        let mut batch_sizes: Vec<usize> = [32, 64, 128, 256].into_iter().filter(|&b| b <= n).collect();
        if batch_sizes.is_empty() {
            batch_sizes.push(n.max(1));
        }
        if kind == OptimizerKind::Gd {
            batch_sizes = vec![n.max(1)];
        }
        let lrs = match kind {
            OptimizerKind::Adam | OptimizerKind::Adamw => log_grid(1e-5, 1e-2, 7),
            _ => log_grid(1e-3, 1e-2, 5),
        };
        TuneGrid { batch_sizes, lrs, max_epochs_tune: default_tune_epochs() }
    }
}

/// Grid point with the lowest final training loss after a short budget.
/// Ties go to higher training accuracy, then smaller learning rate, then
/// smaller batch.
pub fn tune(spec: &ModelSpec, ds: &Dataset, base: &TrainConfig, grid: &TuneGrid) -> Result<OptimizerSpec> {
    if grid.batch_sizes.is_empty() || grid.lrs.is_empty() || grid.max_epochs_tune == 0 {
        return Err(Error::Config("tune grid must be nonempty with a positive budget".into()));
    }
    let model = build(spec)?;
    let mut best: Option<(f64, f64, OptimizerSpec)> = None;
    for &batch_size in &grid.batch_sizes {
        for &lr in &grid.lrs {
            let opt = OptimizerSpec { lr, batch_size, max_epochs: grid.max_epochs_tune, ..base.optimizer };
            let cfg = TrainConfig { optimizer: opt, early_stop: false, ..*base };
            let report = match train(&model, ds, &cfg) {
                Ok(r) => r,
                Err(e @ (Error::Divergence { .. } | Error::NonFiniteLoss { .. })) => {
                    debug!("tune: lr {lr} batch {batch_size} diverged: {e}");
                    continue;
                }
                Err(e) => return Err(e),
            };
            let loss = *report.loss_history.last().expect("at least one epoch");
            let acc = report.final_train_accuracy;
            let better = match &best {
                None => true,
                Some((bl, ba, bo)) => {
                    loss < *bl
                        || (loss == *bl && acc > *ba)
                        || (loss == *bl && acc == *ba && (lr, batch_size) < (bo.lr, bo.batch_size))
                }
            };
            if better {
                best = Some((loss, acc, opt));
            }
        }
    }
    let (_, _, chosen) = best.ok_or(Error::TuneExhausted)?;
    Ok(OptimizerSpec { max_epochs: base.optimizer.max_epochs, ..chosen })
}
