//! Minimum-cost bipartite assignment of predicted masks to ground-truth masks.
//!
//! The solver pads the cost matrix to a square, runs the shortest augmenting
//! path form of the Hungarian algorithm to obtain an optimal dual, and then
//! picks the lexicographically smallest perfect matching among the edges the
//! dual makes tight. Every optimal assignment lives on those edges, so the
//! tie-break never trades away optimality.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{mask_dice, mask_iou, RasterMask};

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl CostMatrix {
    /// `values` is row-major; rows are predictions, columns ground truths.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::InvalidCost(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidCost(format!("entry {bad} is not a finite nonnegative cost")));
        }
        Ok(CostMatrix { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidCost("ragged rows".into()));
        }
        CostMatrix::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        CostMatrix::new(self.rows, self.cols, self.values.iter().map(|v| v * factor).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(prediction, ground truth)` pairs in ascending prediction order.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_groundtruths: Vec<usize>,
    /// Sum of the paired costs, accumulated in pair order.
    pub total_cost: f64,
}

/// Weights of the geometric matching cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    pub iou_weight: f64,
    pub dice_weight: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            iou_weight: 1.0,
            dice_weight: 0.0,
        }
    }
}

pub fn build_cost_matrix(preds: &[RasterMask], gts: &[RasterMask], config: &CostConfig) -> Result<CostMatrix> {
    for w in [config.iou_weight, config.dice_weight] {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidCost(format!("weight {w} must be finite and nonnegative")));
        }
    }
    let mut values = Vec::with_capacity(preds.len() * gts.len());
    for p in preds {
        for g in gts {
            let mut cost = 0.0;
            if config.iou_weight > 0.0 {
                cost += config.iou_weight * (1.0 - mask_iou(p, g)?);
            } else {
                p.same_dims(g)?;
            }
            if config.dice_weight > 0.0 {
                cost += config.dice_weight * (1.0 - mask_dice(p, g)?);
            }
            values.push(cost);
        }
    }
    CostMatrix::new(preds.len(), gts.len(), values)
}

const NONE: usize = usize::MAX;

pub fn hungarian(costs: &CostMatrix) -> Assignment {
    let (rows, cols) = (costs.rows, costs.cols);
    let n = rows.max(cols);
    let padded = |i: usize, j: usize| if i < rows && j < cols { costs.get(i, j) } else { 0.0 };

    let (mut row_to_col, row_pot, col_pot) = solve_square(n, padded);
    let mut col_to_row = vec![NONE; n];
    for (i, &j) in row_to_col.iter().enumerate() {
        col_to_row[j] = i;
    }

    let scale = costs.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let eps = 1e-10 * scale;
    let tight = |i: usize, j: usize| padded(i, j) - row_pot[i] - col_pot[j] <= eps;

    // Fix rows in order to the smallest tight column that still admits a
    // perfect matching of the remaining rows. Padding columns sort last, so a
    // real row prefers any real column over staying unmatched.
    let mut fixed_col = vec![false; n];
    for i in 0..rows {
        for c in 0..n {
            if fixed_col[c] || !tight(i, c) {
                continue;
            }
            if row_to_col[i] == c {
                break;
            }
            let displaced = col_to_row[c];
            let freed = row_to_col[i];
            row_to_col[i] = c;
            col_to_row[c] = i;
            row_to_col[displaced] = NONE;
            col_to_row[freed] = NONE;

            let mut visited = fixed_col.clone();
            visited[c] = true;
            if augment(displaced, &tight, &mut visited, &mut row_to_col, &mut col_to_row) {
                break;
            }
            row_to_col[i] = freed;
            col_to_row[freed] = i;
            row_to_col[displaced] = c;
            col_to_row[c] = displaced;
        }
        fixed_col[row_to_col[i]] = true;
    }

    let mut pairs = Vec::with_capacity(rows.min(cols));
    let mut unmatched_predictions = Vec::new();
    for (i, &j) in row_to_col.iter().enumerate().take(rows) {
        if j < cols {
            pairs.push((i, j));
        } else {
            unmatched_predictions.push(i);
        }
    }
    let unmatched_groundtruths = (0..cols).filter(|&j| col_to_row[j] >= rows).collect();
    let total_cost = pairs.iter().map(|&(i, j)| costs.get(i, j)).sum();
    Assignment {
        pairs,
        unmatched_predictions,
        unmatched_groundtruths,
        total_cost,
    }
}

fn augment(
    row: usize,
    tight: &impl Fn(usize, usize) -> bool,
    visited: &mut [bool],
    row_to_col: &mut [usize],
    col_to_row: &mut [usize],
) -> bool {
    for col in 0..visited.len() {
        if visited[col] || !tight(row, col) {
            continue;
        }
        visited[col] = true;
        let owner = col_to_row[col];
        if owner == NONE || augment(owner, tight, visited, row_to_col, col_to_row) {
            row_to_col[row] = col;
            col_to_row[col] = row;
            return true;
        }
    }
    false
}

/// Square assignment by shortest augmenting paths. Returns the row-to-column
/// matching and the row/column potentials of an optimal dual.
fn solve_square(n: usize, cost: impl Fn(usize, usize) -> f64) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    // 1-based internally; index 0 is the virtual source row/column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[owner[j] - 1] = j - 1;
    }
    (row_to_col, u[1..].to_vec(), v[1..].to_vec())
}

/// Cost matrix construction followed by optimal assignment.
pub fn assign_targets(preds: &[RasterMask], gts: &[RasterMask], config: &CostConfig) -> Result<Assignment> {
    Ok(hungarian(&build_cost_matrix(preds, gts, config)?))
}
