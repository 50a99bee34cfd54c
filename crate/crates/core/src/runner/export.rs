use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{mean, sample_stderr};
use super::{write_file, RunRecord};
use crate::error::{Error, Result};

/// One line of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub id: String,
    pub variant: String,
    pub reparam: String,
    pub scale_value: Option<usize>,
    pub repeat: usize,
    pub param_count: usize,
    pub effective_bits: u64,
    pub emc: Option<usize>,
    pub saturated: Option<bool>,
    pub below_start: Option<bool>,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub generalization_gap: Option<f64>,
    pub error: Option<String>,
}

impl From<&RunRecord> for SummaryRow {
    fn from(r: &RunRecord) -> Self {
        SummaryRow {
            id: r.id.clone(),
            variant: r.variant.clone(),
            reparam: r.reparam_label.clone(),
            scale_value: r.scale_value,
            repeat: r.repeat,
            param_count: r.param_count,
            effective_bits: r.effective_bits,
            emc: r.emc.as_ref().map(|e| e.emc),
            saturated: r.emc.as_ref().map(|e| e.saturated),
            below_start: r.emc.as_ref().map(|e| e.below_start),
            train_accuracy: r.train_accuracy,
            test_accuracy: r.test_accuracy,
            generalization_gap: r.generalization_gap,
            error: r.error.clone(),
        }
    }
}

/// Mean EMC over repeats at one x position of one series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub series: String,
    pub x: u64,
    pub y_mean: f64,
    pub y_stderr: f64,
    pub count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum XAxis {
    Params,
    Bits,
}

/// Groups successful records by series and x, sorted by both.
pub fn plot_points(records: &[RunRecord], axis: XAxis) -> Vec<PlotPoint> {
    let mut groups: BTreeMap<(String, u64), Vec<f64>> = BTreeMap::new();
    for r in records {
        if let Some(e) = &r.emc {
            let x = match axis {
                XAxis::Params => r.param_count as u64,
                XAxis::Bits => r.effective_bits,
            };
            groups.entry((r.series(), x)).or_default().push(e.emc as f64);
        }
    }
    groups
        .into_iter()
        .map(|((series, x), ys)| PlotPoint { series, x, y_mean: mean(&ys), y_stderr: sample_stderr(&ys), count: ys.len() })
        .collect()
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
}

pub fn from_csv<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_csv(&text)
}

/// Writes `summary.csv`, the plot tables and, optionally, the SVG plots.
pub fn write_outputs(out: &Path, records: &[RunRecord], svg: bool) -> Result<()> {
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let rows: Vec<SummaryRow> = sorted.iter().map(|r| SummaryRow::from(*r)).collect();
    write_file(&out.join("summary.csv"), &to_csv(&rows)?)?;
    let plots = out.join("plots");
    for (axis, stem, label) in [(XAxis::Params, "emc_vs_params", "parameters"), (XAxis::Bits, "emc_vs_bits", "effective bits")] {
        let points = plot_points(records, axis);
        write_file(&plots.join(format!("{stem}.csv")), &to_csv(&points)?)?;
        if svg {
            write_file(&plots.join(format!("{stem}.svg")), &render_svg(&points, label))?;
        }
    }
    Ok(())
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Log-log line plot of EMC against the x axis, one line per series.
/// Points with a zero mean cannot be placed on a log axis and are skipped.
pub fn render_svg(points: &[PlotPoint], x_label: &str) -> String {
    let (w, h, m) = (640.0, 420.0, 60.0);
    let pts: Vec<&PlotPoint> = points.iter().filter(|p| p.y_mean > 0.0 && p.x > 0).collect();
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    if pts.is_empty() {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">no data</text></svg>"#, w / 2.0, h / 2.0);
        return s;
    }
    let lx = |v: f64| v.log10();
    let bounds = |vals: Vec<f64>| {
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min).floor();
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil();
        (lo, if hi > lo { hi } else { lo + 1.0 })
    };
    let (x0, x1) = bounds(pts.iter().map(|p| lx(p.x as f64)).collect());
    let (y0, y1) = bounds(pts.iter().map(|p| lx(p.y_mean)).collect());
    let px = |v: f64| m + (lx(v) - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |v: f64| h - m - (lx(v) - y0) / (y1 - y0) * (h - 2.0 * m);
    let _ = writeln!(s, r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#, h - m, w - m);
    for e in x0 as i32..=x1 as i32 {
        let x = px(10f64.powi(e));
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{}" text-anchor="middle">1e{e}</text>"#, h - m + 16.0);
    }
    for e in y0 as i32..=y1 as i32 {
        let y = py(10f64.powi(e));
        let _ = writeln!(s, r#"<text x="{}" y="{y:.1}" text-anchor="end">1e{e}</text>"#, m - 6.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, w / 2.0, h - 12.0);
    let _ = writeln!(s, r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">EMC</text>"#, h / 2.0, h / 2.0);
    let mut series: BTreeMap<&str, Vec<&PlotPoint>> = BTreeMap::new();
    for p in &pts {
        series.entry(p.series.as_str()).or_default().push(p);
    }
    for (i, (name, ps)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let d: Vec<String> = ps.iter().map(|p| format!("{:.1},{:.1}", px(p.x as f64), py(p.y_mean))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, d.join(" "));
        for p in ps {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, px(p.x as f64), py(p.y_mean));
        }
        let ly = m + 16.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly:.1}" fill="{color}">{}</text>"#, m + 10.0, xml_escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
