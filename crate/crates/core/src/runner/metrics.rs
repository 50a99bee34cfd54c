use crate::data::Dataset;
use crate::emc::EMCResult;
use crate::error::{Error, Result};
use crate::objective::{accuracy, Objective};

/// `100·(semantic − random)/random`.
pub fn pct_emc_increase(semantic: &EMCResult, random: &EMCResult) -> Result<f64> {
    pct_increase(semantic.emc as f64, random.emc as f64)
}

pub fn pct_increase(semantic: f64, random: f64) -> Result<f64> {
    if !(random > 0.0) {
        return Err(Error::InvalidArgument("percent increase over a random-label EMC of 0".into()));
    }
    Ok(100.0 * (semantic - random) / random)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "pearson needs two equal-length series of at least 2 points (got {} and {})",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument("pearson of a series with zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&ranks(x), &ranks(y))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Train accuracy minus test accuracy at `w`.
pub fn generalization_gap(obj: &dyn Objective, w: &[f64], train: &Dataset, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Dataset("generalization gap needs a nonempty test set".into()));
    }
    Ok(accuracy(obj, w, train)? - accuracy(obj, w, test)?)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Standard error of the mean, `s/√n` with the `n−1` sample deviation;
/// 0 for fewer than two values.
pub fn sample_stderr(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (var / v.len() as f64).sqrt()
}
