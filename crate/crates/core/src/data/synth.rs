use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seed;

/// Isotropic unit-variance Gaussian clusters centred at `separation·μ_c`,
/// where each `μ_c` is a seeded unit vector. Labels are balanced to within
/// one sample and appear in shuffled order.
pub fn synth_clusters(classes: usize, dim: usize, n: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || n < classes || dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "synth_clusters needs classes >= 2, n >= classes, dim >= 1 (got {classes}, {n}, {dim})"
        )));
    }
    let mut rng = seed::rng(seed::derive_str(seed, "synth_clusters"));
    let mut centers = Vec::with_capacity(classes * dim);
    for _ in 0..classes {
        let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        centers.extend(dir.iter().map(|v| separation * v / norm));
    }
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let mut inputs = Vec::with_capacity(n * dim);
    for &c in &labels {
        let center = &centers[c * dim..(c + 1) * dim];
        inputs.extend(center.iter().map(|&m| { let z: f64 = StandardNormal.sample(&mut rng); m + z }));
    }
    Dataset::new(format!("clusters-k{classes}-d{dim}-n{n}"), Tensor::new(vec![n, dim], inputs)?, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let a = synth_clusters(3, 4, 10, 2.0, 5).unwrap();
        let b = synth_clusters(3, 4, 10, 2.0, 5).unwrap();
        assert_eq!(a, b);
        let mut counts = [0usize; 3];
        a.labels().iter().for_each(|&l| counts[l] += 1);
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn zero_separation_carries_no_label_signal() {
        // With coincident centres the class-conditional means agree up to
        // sampling noise: |mean_0 - mean_1| ~ sqrt(2/(n/2)) per coordinate.
        let ds = synth_clusters(2, 3, 4000, 0.0, 1).unwrap();
        for j in 0..3 {
            let mut sums = [0.0; 2];
            let mut counts = [0.0; 2];
            for i in 0..ds.len() {
                sums[ds.labels()[i]] += ds.row(i)[j];
                counts[ds.labels()[i]] += 1.0;
            }
            let diff = sums[0] / counts[0] - sums[1] / counts[1];
            assert!(diff.abs() < 4.0 * (2.0f64 / 2000.0).sqrt() * 1.0, "coordinate {j}: {diff}");
        }
    }

    #[test]
    fn rejects_degenerate_arguments() {
        assert!(synth_clusters(1, 4, 10, 1.0, 0).is_err());
        assert!(synth_clusters(5, 4, 4, 1.0, 0).is_err());
    }
}
