use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::export::{plot_points, to_csv, XAxis};
use super::metrics::{mean, pct_increase, pearson};
use super::{Pairing, RunRecord};
use crate::emc::avg_log10;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// EMC against parameter count, averaged over repeats.
    Curve,
    /// Mean `log₁₀ EMC` per series.
    Avglog,
    /// Generalization gap per record.
    Gap,
    /// Correlation of the semantic-over-random EMC increase with the gap.
    Pearson,
}

/// One model size in the pairing table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub reparam: String,
    pub param_count: usize,
    pub semantic_emc: f64,
    pub random_emc: f64,
    pub pct_increase: f64,
    pub gap: f64,
}

/// Pairs semantic and random runs by reparameterization and model size.
/// Both EMCs and the gap are averaged over repeats before pairing; sizes
/// with a zero random-label EMC or no measured gap are left out.
pub fn pair_rows(records: &[RunRecord], pairing: &Pairing) -> Vec<PairRow> {
    type Key = (String, usize);
    let mut sem: BTreeMap<Key, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut rnd: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for r in records {
        let Some(e) = &r.emc else { continue };
        let key = (r.reparam_label.clone(), r.param_count);
        if r.variant == pairing.semantic {
            let entry = sem.entry(key).or_default();
            entry.0.push(e.emc as f64);
            if let Some(g) = r.generalization_gap {
                entry.1.push(g);
            }
        } else if r.variant == pairing.random {
            rnd.entry(key).or_default().push(e.emc as f64);
        }
    }
    sem.into_iter()
        .filter_map(|(key, (s, gaps))| {
            let r = mean(rnd.get(&key)?);
            let pct = pct_increase(mean(&s), r).ok()?;
            (!gaps.is_empty()).then(|| PairRow {
                reparam: key.0,
                param_count: key.1,
                semantic_emc: mean(&s),
                random_emc: r,
                pct_increase: pct,
                gap: mean(&gaps),
            })
        })
        .collect()
}

/// Renders `metric` over `records` as CSV-style text.
pub fn report(records: &[RunRecord], metric: Metric, pairing: &Pairing) -> Result<String> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to report on".into()));
    }
    let mut out = String::new();
    match metric {
        Metric::Curve => out = to_csv(&plot_points(records, XAxis::Params))?,
        Metric::Avglog => {
            let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            for r in records {
                if let Some(e) = &r.emc {
                    groups.entry(r.series()).or_default().push(e.emc);
                }
            }
            out.push_str("series,avg_log10_emc,count\n");
            for (series, v) in groups {
                match avg_log10(&v) {
                    Ok(a) => writeln!(out, "{series},{a},{}", v.len()),
                    Err(_) => writeln!(out, "{series},undefined,{}", v.len()),
                }
                .expect("write to String");
            }
        }
        Metric::Gap => {
            #[derive(Serialize)]
            struct Row<'a> {
                id: &'a str,
                emc: Option<usize>,
                train_accuracy: Option<f64>,
                test_accuracy: Option<f64>,
                generalization_gap: Option<f64>,
            }
            let mut sorted: Vec<&RunRecord> = records.iter().collect();
            sorted.sort_by(|a, b| a.id.cmp(&b.id));
            let rows: Vec<Row> = sorted
                .iter()
                .map(|r| Row {
                    id: &r.id,
                    emc: r.emc.as_ref().map(|e| e.emc),
                    train_accuracy: r.train_accuracy,
                    test_accuracy: r.test_accuracy,
                    generalization_gap: r.generalization_gap,
                })
                .collect();
            out = to_csv(&rows)?;
        }
        Metric::Pearson => {
            let rows = pair_rows(records, pairing);
            out = to_csv(&rows)?;
            let mut by_reparam: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
            for r in &rows {
                let e = by_reparam.entry(r.reparam.as_str()).or_default();
                e.0.push(r.pct_increase);
                e.1.push(r.gap);
            }
            if by_reparam.is_empty() {
                out.push_str("# pearson: no paired sizes with a measured gap\n");
            }
            for (reparam, (x, y)) in by_reparam {
                match pearson(&x, &y) {
                    Ok(r) => writeln!(out, "# pearson {reparam}: r = {r:.4} over {} sizes", x.len()),
                    Err(e) => writeln!(out, "# pearson {reparam}: undefined ({e})"),
                }
                .expect("write to String");
            }
        }
    }
    Ok(out)
}
