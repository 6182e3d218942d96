use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear map from `N` predicted landmarks to `M` landmarks of another
/// annotation standard. Each target point is regressed only on the source
/// points listed in its block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkMap {
    pub sources: usize,
    /// Allowed source points per target point.
    pub blocks: Vec<Vec<usize>>,
    pub lambda: f64,
    /// `2N x 2M`, row-major: row `2i + a` (source coordinate), column
    /// `2q + b` (target coordinate).
    pub beta: Vec<f64>,
}

impl LandmarkMap {
    /// Blocks pairing every target with the sources of the same group.
    pub fn group_blocks(source_group: &[usize], target_group: &[usize]) -> Vec<Vec<usize>> {
        target_group
            .iter()
            .map(|g| (0..source_group.len()).filter(|&i| source_group[i] == *g).collect())
            .collect()
    }

    /// Closed-form ridge solution per block.
    pub fn fit(preds: &[Vec<[f64; 2]>], gts: &[Vec<[f64; 2]>], lambda: f64, blocks: Vec<Vec<usize>>) -> Result<Self> {
        if preds.len() != gts.len() || preds.is_empty() {
            return Err(Error::Data(format!(
                "need matching non-empty sets, got {} predictions and {} targets",
                preds.len(),
                gts.len()
            )));
        }
        if !(lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
        }
        let n = preds[0].len();
        let m = blocks.len();
        if preds.iter().any(|p| p.len() != n) || gts.iter().any(|g| g.len() != m) {
            return Err(Error::Data("inconsistent landmark counts".into()));
        }
        let mut beta = vec![0.0; 2 * n * 2 * m];
        for (q, block) in blocks.iter().enumerate() {
            if block.iter().any(|&i| i >= n) {
                return Err(Error::Config(format!("block {q} refers to a missing source point")));
            }
            let cols = 2 * block.len();
            if cols == 0 {
                continue;
            }
            let x = DMatrix::from_fn(preds.len(), cols, |r, c| preds[r][block[c / 2]][c % 2]);
            let mut gram = x.transpose() * &x;
            for d in 0..cols {
                gram[(d, d)] += lambda;
            }
            let singular = || {
                Error::Data(format!(
                    "block for target {q} is rank deficient; use a positive ridge weight"
                ))
            };
            if lambda == 0.0 {
                let sv = gram.clone().singular_values();
                let max = sv.max();
                if sv.min() <= 1e-12 * max.max(1e-300) {
                    return Err(singular());
                }
            }
            let chol = gram.cholesky().ok_or_else(singular)?;
            for b in 0..2 {
                let t = DVector::from_fn(preds.len(), |r, _| gts[r][q][b]);
                let sol = chol.solve(&(x.transpose() * t));
                for (c, v) in sol.iter().enumerate() {
                    let row = 2 * block[c / 2] + c % 2;
                    beta[row * 2 * m + 2 * q + b] = *v;
                }
            }
        }
        Ok(Self {
            sources: n,
            blocks,
            lambda,
            beta,
        })
    }

    pub fn targets(&self) -> usize {
        self.blocks.len()
    }

    /// Coefficient for source coordinate `(i, a)` into target `(q, b)`.
    pub fn coefficient(&self, i: usize, a: usize, q: usize, b: usize) -> f64 {
        self.beta[(2 * i + a) * 2 * self.targets() + 2 * q + b]
    }

    pub fn apply(&self, points: &[[f64; 2]]) -> Vec<[f64; 2]> {
        (0..self.targets())
            .map(|q| {
                let mut out = [0.0; 2];
                for &i in &self.blocks[q] {
                    for a in 0..2 {
                        for (b, o) in out.iter_mut().enumerate() {
                            *o += self.coefficient(i, a, q, b) * points[i][a];
                        }
                    }
                }
                out
            })
            .collect()
    }
}

/// For each target point, the source point nearest to it on average
/// layouts. Ties go to the lower index.
pub fn correspondence_table(source_mean: &[[f64; 2]], target_mean: &[[f64; 2]]) -> Vec<usize> {
    target_mean
        .iter()
        .map(|t| {
            let mut best = (f64::INFINITY, 0);
            for (i, s) in source_mean.iter().enumerate() {
                let d = (s[0] - t[0]).hypot(s[1] - t[1]);
                if d < best.0 {
                    best = (d, i);
                }
            }
            best.1
        })
        .collect()
}

/// Occlusion flags on the target standard, copied from corresponding
/// source points.
pub fn transfer_occlusion(flags: &[bool], table: &[usize]) -> Vec<bool> {
    table.iter().map(|&i| flags[i]).collect()
}
