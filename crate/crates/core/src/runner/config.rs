use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::converge::ConvergenceCriteria;
use crate::data::{load_csv, load_tensor_file, synth_clusters, Dataset, TransformSpec};
use crate::emc::EMCConfig;
use crate::error::{Error, Result};
use crate::models::{scale_series, ModelSpec, ScaleAxis};
use crate::optim::{OptimizerSpec, RegularizerSpec, TuneGrid};
use crate::reparam::Reparam;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    SynthClusters { classes: usize, dim: usize, n: usize, separation: f64, seed: u64 },
    Csv { path: PathBuf, label_column: String, num_classes: usize },
    TensorFile { manifest: PathBuf },
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::SynthClusters { classes, dim, n, separation, seed } => {
                synth_clusters(*classes, *dim, *n, *separation, *seed)
            }
            DatasetSource::Csv { path, label_column, num_classes } => load_csv(path, label_column, *num_classes),
            DatasetSource::TensorFile { manifest } => load_tensor_file(manifest),
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DatasetSource::SynthClusters { .. } => {}
            DatasetSource::Csv { path, .. } => fix(path),
            DatasetSource::TensorFile { manifest } => fix(manifest),
        }
    }
}

/// A named chain of data interventions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub transforms: Vec<TransformSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleSpec {
    pub axis: ScaleAxis,
    pub values: Vec<usize>,
}

/// Replaces the optimizer's learning rate and batch size by a grid search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneSpec {
    /// Defaults to the standard grid for the optimizer kind.
    #[serde(default)]
    pub grid: Option<TuneGrid>,
    /// Size of the tuning subset; defaults to `emc.start_n`.
    #[serde(default)]
    pub n: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralizationSpec {
    /// Fraction of each variant's data held out as a test set.
    pub test_fraction: f64,
}

/// Which variants hold semantic and random labels for the correlation metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pairing {
    pub semantic: String,
    pub random: String,
}

fn one() -> usize {
    1
}

fn base_variants() -> Vec<Variant> {
    vec![Variant { name: "base".into(), transforms: vec![] }]
}

fn no_reparam() -> Vec<Reparam> {
    vec![Reparam::None]
}

/// A whole sweep. Mirrors the JSON run-config field for field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSource,
    #[serde(default = "base_variants")]
    pub variants: Vec<Variant>,
    pub model: ModelSpec,
    #[serde(default)]
    pub scale: Option<ScaleSpec>,
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub tune: Option<TuneSpec>,
    #[serde(default)]
    pub regularizer: RegularizerSpec,
    #[serde(default)]
    pub convergence: ConvergenceCriteria,
    pub emc: EMCConfig,
    #[serde(default = "no_reparam")]
    pub reparams: Vec<Reparam>,
    /// Independent EMC searches per grid point.
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default)]
    pub generalization: Option<GeneralizationSpec>,
    #[serde(default)]
    pub pairing: Option<Pairing>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub jobs: usize,
    /// Store elapsed seconds in records (makes reruns differ byte-wise).
    #[serde(default)]
    pub record_wall_clock: bool,
    #[serde(default)]
    pub svg: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads, parses and validates a config file. Relative paths inside it
    /// are taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset.resolve_paths(base);
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.name.is_empty() {
            return bad("name must be nonempty".into());
        }
        if self.variants.is_empty() {
            return bad("at least one variant is required".into());
        }
        let mut names: Vec<&str> = self.variants.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("variant names must be unique".into());
        }
        if names.iter().any(|n| n.is_empty() || !n.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')) {
            return bad("variant names must be nonempty and use only [A-Za-z0-9_-]".into());
        }
        if self.reparams.is_empty() {
            return bad("reparams must list at least one entry (use \"none\")".into());
        }
        for r in &self.reparams {
            r.validate()?;
        }
        if self.repeats < 1 || self.jobs < 1 {
            return bad("repeats and jobs must be >= 1".into());
        }
        for spec in self.model_specs()? {
            spec.validate()?;
        }
        self.optimizer.validate()?;
        self.regularizer.validate()?;
        self.convergence.validate()?;
        self.emc.validate()?;
        if let Some(g) = &self.generalization {
            if !(g.test_fraction > 0.0 && g.test_fraction < 1.0) {
                return bad(format!("test_fraction {} must lie in (0, 1)", g.test_fraction));
            }
        }
        if let Some(p) = &self.pairing {
            for name in [&p.semantic, &p.random] {
                if !self.variants.iter().any(|v| &v.name == name) {
                    return bad(format!("pairing names unknown variant {name:?}"));
                }
            }
        }
        if let Some(t) = &self.tune {
            if let Some(g) = &t.grid {
                if g.batch_sizes.is_empty() || g.lrs.is_empty() || g.max_epochs_tune == 0 {
                    return bad("tune grid must be nonempty with a positive budget".into());
                }
            }
        }
        if let DatasetSource::SynthClusters { classes, dim, n, .. } = self.dataset {
            if classes < 2 || dim < 1 || n < classes {
                return bad("synth_clusters needs classes >= 2, dim >= 1 and n >= classes".into());
            }
        }
        Ok(())
    }

    pub fn model_specs(&self) -> Result<Vec<ModelSpec>> {
        match &self.scale {
            None => Ok(vec![self.model]),
            Some(s) => {
                if s.values.is_empty() {
                    return Err(Error::Config("scale.values must be nonempty".into()));
                }
                scale_series(&self.model, s.axis, &s.values).map_err(|e| Error::Config(e.to_string()))
            }
        }
    }
}

pub(crate) fn reparam_label(r: &Reparam) -> String {
    match r {
        Reparam::None => "full".into(),
        Reparam::Subspace(s) => format!("subspace{}", s.dim),
        Reparam::Quantized(q) => format!("q{}", q.bits),
    }
}
