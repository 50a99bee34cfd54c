use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};

use crate::autodiff::Segment;

/// Sides longer than this keep an identity preconditioner.
pub const SHAMPOO_MAX_DIM: usize = 1024;

const EIG_TOL: f64 = 1e-14;
const EIG_MAX_ITER: usize = 10_000;

/// `(A + λI)^(-1/4)` for a symmetric positive semi-definite `A` given
/// row-major, together with the smallest eigenvalue of `A + λI`. Eigenvalues
/// of `A` below zero (rounding noise) are clamped to zero first. `None` when
/// the eigensolver does not converge or produces non-finite values.
pub fn inverse_fourth_root(a: &[f64], n: usize, damping: f64) -> Option<(Vec<f64>, f64)> {
    let m = DMatrix::from_row_slice(n, n, a);
    let (root, min) = inverse_root_matrix(m, damping)?;
    Some((root.transpose().as_slice().to_vec(), min))
}

fn inverse_root_matrix(a: DMatrix<f64>, damping: f64) -> Option<(DMatrix<f64>, f64)> {
    let sym = (&a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, EIG_TOL, EIG_MAX_ITER)?;
    let damped: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0) + damping).collect();
    if damped.iter().any(|l| !l.is_finite()) {
        return None;
    }
    let min = damped.iter().copied().fold(f64::INFINITY, f64::min);
    let q = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| q[(i, j)] * damped[j].powf(-0.25));
    let root = scaled * q.transpose();
    root.iter().all(|v| v.is_finite()).then_some((root, min))
}

struct Block {
    range: std::ops::Range<usize>,
    rows: usize,
    cols: usize,
    left: Option<DMatrix<f64>>,
    right: Option<DMatrix<f64>>,
    left_root: Option<DMatrix<f64>>,
    right_root: Option<DMatrix<f64>>,
    /// Set while the last refresh failed; such blocks take plain steps.
    failed: bool,
}

/// Two-sided Shampoo over every parameter segment viewed as a matrix.
pub struct ShampooState {
    blocks: Vec<Block>,
    damping: f64,
    update_every: usize,
    steps: usize,
    min_eig: f64,
    fallbacks: usize,
}

impl ShampooState {
    pub fn new(segments: &[Segment], damping: f64, update_every: usize) -> Self {
        let side = |d: usize| (d <= SHAMPOO_MAX_DIM).then(|| DMatrix::zeros(d, d));
        let blocks = segments
            .iter()
            .map(|s| {
                let (rows, cols) = s.matrix_dims();
                Block {
                    range: s.range(),
                    rows,
                    cols,
                    left: side(rows),
                    right: side(cols),
                    left_root: None,
                    right_root: None,
                    failed: false,
                }
            })
            .collect();
        ShampooState { blocks, damping, update_every: update_every.max(1), steps: 0, min_eig: f64::INFINITY, fallbacks: 0 }
    }

    /// Smallest eigenvalue of any damped accumulator seen at a refresh.
    pub fn min_preconditioner_eig(&self) -> f64 {
        self.min_eig
    }

    /// Number of per-tensor refreshes that fell back to a plain step.
    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64, weight_decay: f64) {
        let refresh = self.steps % self.update_every == 0;
        self.steps += 1;
        for b in &mut self.blocks {
            let g: Vec<f64> = b.range.clone().map(|i| grad[i] + weight_decay * theta[i]).collect();
            let gm = DMatrix::from_row_slice(b.rows, b.cols, &g);
            if let Some(l) = &mut b.left {
                *l += &gm * gm.transpose();
            }
            if let Some(r) = &mut b.right {
                *r += gm.transpose() * &gm;
            }
            if refresh {
                b.failed = false;
                for (acc, root) in [(&b.left, &mut b.left_root), (&b.right, &mut b.right_root)] {
                    let Some(acc) = acc else { continue };
                    match inverse_root_matrix(acc.clone(), self.damping) {
                        Some((r, min)) => {
                            *root = Some(r);
                            self.min_eig = self.min_eig.min(min);
                        }
                        None => {
                            warn!("shampoo: eigendecomposition failed for a {}x{} block; plain step", acc.nrows(), acc.ncols());
                            b.failed = true;
                        }
                    }
                }
                if b.failed {
                    self.fallbacks += 1;
                }
            }
            let update = if b.failed {
                gm
            } else {
                let lhs = match &b.left_root {
                    Some(l) => l * &gm,
                    None => gm,
                };
                match &b.right_root {
                    Some(r) => lhs * r,
                    None => lhs,
                }
            };
            let flat = update.transpose();
            for (t, u) in theta[b.range.clone()].iter_mut().zip(flat.as_slice()) {
                *t -= lr * u;
            }
        }
    }
}
