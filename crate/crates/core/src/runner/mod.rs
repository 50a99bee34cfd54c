//! Config-driven sweeps: one EMC search per grid point, persisted as
//! byte-stable JSON records plus CSV summaries and plot data.

mod config;
pub mod export;
pub mod metrics;
pub mod report;

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::converge::ConvergenceCriteria;
use crate::data::{apply_all, subsample, Dataset, SubsetSampler, TransformSpec};
use crate::emc::{calibrate_grad_threshold, search, EMCConfig, EMCResult, ProbeSetup};
use crate::error::{Error, Result};
use crate::models::{build, ModelSpec};
use crate::objective::accuracy;
use crate::optim::{train, tune, TrainConfig, TuneGrid};
use crate::reparam::Reparam;
use crate::seed;

pub use config::{DatasetSource, ExperimentConfig, GeneralizationSpec, Pairing, ScaleSpec, TuneSpec, Variant};
pub(crate) use config::reparam_label;

/// Everything needed to recompute one record, independent of the sweep
/// config it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub dataset: DatasetSource,
    pub transforms: Vec<TransformSpec>,
    /// Held-out fraction and the seed of the split, when measuring the gap.
    pub test_split: Option<(f64, u64)>,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub tune: Option<TuneSpec>,
    pub emc: EMCConfig,
    pub reparam: Reparam,
    /// Seed of the post-search fit used for the generalization gap.
    pub gap_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub variant: String,
    pub reparam_label: String,
    pub scale_value: Option<usize>,
    pub repeat: usize,
    /// Config echo with tuned hyperparameters and calibrated thresholds
    /// filled in once the run completes.
    pub run: RunSpec,
    pub param_count: usize,
    pub effective_bits: u64,
    pub emc: Option<EMCResult>,
    pub convergence: Option<ConvergenceCriteria>,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub generalization_gap: Option<f64>,
    pub wall_clock_secs: Option<f64>,
    pub error: Option<String>,
}

impl RunRecord {
    /// Plot series: variant and reparameterization.
    pub fn series(&self) -> String {
        format!("{}/{}", self.variant, self.reparam_label)
    }
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub records: Vec<RunRecord>,
    /// Records computed in this invocation (the rest were resumed).
    pub computed: usize,
    pub failed: usize,
}

struct Job {
    id: String,
    variant: usize,
    reparam: Reparam,
    spec: ModelSpec,
    scale_value: Option<usize>,
    repeat: usize,
}

fn jobs(cfg: &ExperimentConfig) -> Result<Vec<Job>> {
    let specs = cfg.model_specs()?;
    let axis = cfg.scale.as_ref().map(|s| format!("{:?}", s.axis).to_lowercase());
    let mut out = Vec::new();
    for (vi, v) in cfg.variants.iter().enumerate() {
        for r in &cfg.reparams {
            for (si, spec) in specs.iter().enumerate() {
                let value = cfg.scale.as_ref().map(|s| s.values[si]);
                for repeat in 0..cfg.repeats {
                    let point = match (&axis, value) {
                        (Some(a), Some(x)) => format!("{a}{x:05}"),
                        _ => "model".into(),
                    };
                    let id = format!("{}__{}__{}__r{repeat:02}", v.name, reparam_label(r), point);
                    out.push(Job { id, variant: vi, reparam: *r, spec: *spec, scale_value: value, repeat });
                }
            }
        }
    }
    Ok(out)
}

/// The data a variant is searched on, and its held-out part if any.
pub fn variant_data(run: &RunSpec, base: &Dataset) -> Result<(Dataset, Option<Dataset>)> {
    let ds = apply_all(&run.transforms, base)?;
    match run.test_split {
        None => Ok((ds, None)),
        Some((fraction, split_seed)) => {
            let (tr, te) = ds.split(fraction, split_seed)?;
            Ok((tr, Some(te)))
        }
    }
}

fn resolve_optimizer(run: &RunSpec, train_ds: &Dataset) -> Result<TrainConfig> {
    let mut cfg = run.train;
    if let Some(t) = &run.tune {
        let n = t.n.unwrap_or(run.emc.start_n).min(train_ds.len());
        let subset = subsample(train_ds, SubsetSampler { n, seed: seed::derive_str(run.emc.trial_seed_base, "tune") })?;
        let grid = t.grid.clone().unwrap_or_else(|| TuneGrid::default_for(cfg.optimizer.kind, n));
        cfg.optimizer = tune(&run.model, &subset, &cfg, &grid)?;
    }
    Ok(cfg)
}

/// Runs the EMC search (and the optional generalization fit) for one grid
/// point. Returns the echo with resolved hyperparameters alongside.
pub fn execute(run: &RunSpec, base: &Dataset) -> Result<(RunSpec, EMCResult, ConvergenceCriteria, Option<(f64, f64)>)> {
    let (train_ds, test_ds) = variant_data(run, base)?;
    let train_cfg = resolve_optimizer(run, &train_ds)?;
    let (result, criteria) = search(&run.model, &train_ds, &run.emc, &train_cfg, &run.reparam)?;
    let resolved = RunSpec { train: TrainConfig { convergence: criteria, ..train_cfg }, tune: None, ..run.clone() };
    let accs = match (&test_ds, result.emc) {
        (Some(test), n) if n >= 1 => {
            let subset = subsample(&train_ds, SubsetSampler { n, seed: seed::derive_str(run.gap_seed, "subset") })?;
            let spec = ModelSpec { init_seed: seed::derive_str(run.gap_seed, "init"), ..run.model };
            let obj = run.reparam.wrap(build(&spec)?, seed::derive_str(run.gap_seed, "reparam"))?;
            let mut cfg = resolved.train;
            cfg.optimizer.seed = seed::derive(cfg.optimizer.seed, &[run.gap_seed]);
            cfg.target_accuracy = run.emc.fit_threshold;
            let report = train(obj.as_ref(), &subset, &cfg)?;
            let w = report.final_params.values();
            Some((accuracy(obj.as_ref(), w, &subset)?, accuracy(obj.as_ref(), w, test)?))
        }
        _ => None,
    };
    Ok((resolved, result, criteria, accs))
}

/// Recomputes the EMC of a stored record from its echo alone.
pub fn rerun(record: &RunRecord) -> Result<EMCResult> {
    let base = record.run.dataset.load()?;
    let (train_ds, _) = variant_data(&record.run, &base)?;
    let cfg = resolve_optimizer(&record.run, &train_ds)?;
    Ok(search(&record.run.model, &train_ds, &record.run.emc, &cfg, &record.run.reparam)?.0)
}

pub fn records_dir(out: &Path) -> PathBuf {
    out.join("records")
}

fn record_path(out: &Path, id: &str) -> PathBuf {
    records_dir(out).join(format!("{id}.json"))
}

/// Byte-stable JSON: keys sorted, shortest round-trip float formatting.
pub fn to_stable_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_record(path: &Path) -> Result<RunRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// All records in `<dir>/records`, sorted by id.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let rd = records_dir(dir);
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&rd)
        .map_err(|e| Error::io(&rd, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_record(p)).collect()
}

/// Executes every grid point of `cfg` on up to `cfg.jobs` threads. With
/// `resume`, records already on disk are loaded instead of recomputed.
pub fn run_sweep(cfg: &ExperimentConfig, resume: bool) -> Result<SweepOutcome> {
    cfg.validate()?;
    let base = cfg.dataset.load()?;
    let jobs = jobs(cfg)?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(records_dir(out)).map_err(|e| Error::io(records_dir(out), e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let writer = Mutex::new(());
    let pending = |job: &Job| !(resume && record_path(out, &job.id).exists());
    let thresholds: Vec<std::result::Result<Option<f64>, String>> = if cfg.convergence.grad_norm_threshold.is_some()
        || !jobs.iter().any(pending)
    {
        cfg.reparams.iter().map(|_| Ok(cfg.convergence.grad_norm_threshold)).collect()
    } else {
        pool.install(|| {
            cfg.reparams
                .par_iter()
                .map(|r| family_threshold(cfg, &base, r).map(Some).map_err(|e| format!("calibration: {e}")))
                .collect()
        })
    };

    let results: Vec<Result<(RunRecord, bool)>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let path = record_path(out, &job.id);
                if resume && path.exists() {
                    if let Ok(r) = read_record(&path) {
                        return Ok((r, false));
                    }
                    warn!("{}: unreadable record, recomputing", job.id);
                }
                let ri = cfg.reparams.iter().position(|r| *r == job.reparam).expect("job reparam is listed");
                let record = compute(cfg, &base, job, &thresholds[ri]);
                let text = to_stable_json(&record)?;
                let _guard = writer.lock().unwrap_or_else(|p| p.into_inner());
                write_file(&path, &text)?;
                info!("{}: emc {:?}", job.id, record.emc.as_ref().map(|e| e.emc));
                Ok((record, true))
            })
            .collect()
    });

    let mut records = Vec::with_capacity(results.len());
    let mut computed = 0;
    for r in results {
        let (rec, fresh) = r?;
        computed += fresh as usize;
        records.push(rec);
    }
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    export::write_outputs(out, &records, cfg.svg)?;
    Ok(SweepOutcome { records, computed, failed })
}

fn run_spec(cfg: &ExperimentConfig, variant: &Variant, spec: ModelSpec, reparam: Reparam, id: &str) -> RunSpec {
    let trial_base = seed::derive_str(cfg.seed, id);
    RunSpec {
        dataset: cfg.dataset.clone(),
        transforms: variant.transforms.clone(),
        test_split: cfg
            .generalization
            .map(|g| (g.test_fraction, seed::derive_str(cfg.seed, &format!("split/{}", variant.name)))),
        model: spec,
        train: TrainConfig {
            optimizer: cfg.optimizer,
            regularizer: cfg.regularizer,
            convergence: cfg.convergence,
            target_accuracy: cfg.emc.fit_threshold,
            early_stop: true,
        },
        tune: cfg.tune.clone(),
        emc: EMCConfig { trial_seed_base: trial_base, ..cfg.emc },
        reparam,
        gap_seed: seed::derive_str(trial_base, "gap"),
    }
}

/// Gradient-norm threshold shared by every run of one reparameterization,
/// calibrated once on the smallest model and the first variant.
fn family_threshold(cfg: &ExperimentConfig, base: &Dataset, reparam: &Reparam) -> Result<f64> {
    let spec = cfg
        .model_specs()?
        .into_iter()
        .min_by_key(|s| s.param_count())
        .ok_or_else(|| Error::Config("no model specs".into()))?;
    let label = format!("calibration/{}", reparam_label(reparam));
    let run = run_spec(cfg, &cfg.variants[0], spec, *reparam, &label);
    let (train_ds, _) = variant_data(&run, base)?;
    let train = resolve_optimizer(&run, &train_ds)?;
    let max_n = run.emc.max_n.unwrap_or(train_ds.len()).min(train_ds.len());
    let setup = ProbeSetup { spec: &spec, ds: &train_ds, train: &train, fit_threshold: run.emc.fit_threshold, reparam };
    let t = calibrate_grad_threshold(&setup, run.emc.start_n.min(max_n), 3, run.emc.trial_seed_base)?;
    info!("{}: calibrated gradient-norm threshold {t:e}", reparam_label(reparam));
    Ok(t)
}

fn compute(
    cfg: &ExperimentConfig,
    base: &Dataset,
    job: &Job,
    threshold: &std::result::Result<Option<f64>, String>,
) -> RunRecord {
    let variant = &cfg.variants[job.variant];
    let mut run = run_spec(cfg, variant, job.spec, job.reparam, &job.id);
    let param_count = job.spec.param_count();
    let started = Instant::now();
    let outcome = match threshold {
        Ok(t) => {
            run.train.convergence.grad_norm_threshold = *t;
            execute(&run, base)
        }
        Err(msg) => Err(Error::Config(msg.clone())),
    };
    let wall = cfg.record_wall_clock.then(|| started.elapsed().as_secs_f64());
    let mut rec = RunRecord {
        id: job.id.clone(),
        variant: variant.name.clone(),
        reparam_label: reparam_label(&job.reparam),
        scale_value: job.scale_value,
        repeat: job.repeat,
        run,
        param_count,
        effective_bits: job.reparam.effective_bits(param_count),
        emc: None,
        convergence: None,
        train_accuracy: None,
        test_accuracy: None,
        generalization_gap: None,
        wall_clock_secs: wall,
        error: None,
    };
    match outcome {
        Ok((resolved, result, criteria, accs)) => {
            rec.run = resolved;
            rec.emc = Some(result);
            rec.convergence = Some(criteria);
            if let Some((tr, te)) = accs {
                rec.train_accuracy = Some(tr);
                rec.test_accuracy = Some(te);
                rec.generalization_gap = Some(tr - te);
            }
        }
        Err(e) => {
            warn!("{}: {e}", job.id);
            rec.error = Some(e.to_string());
        }
    }
    rec
}
