//! Dense vector primitives, distances, softmax and the assignment solver.
//!
//! Everything here is pure. Vectors are plain `f64` slices; [`Vec64`] is the
//! owned form used throughout the crate.

use serde::{Deserialize, Serialize};

use crate::error::{GmError, Result};

/// Owned dense vector.
pub type Vec64 = Vec<f64>;

/// Norm below which a vector is treated as degenerate (left unnormalized).
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    SquaredEuclidean,
    #[default]
    Cosine,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales `v` to unit length. Vectors with norm below [`NORM_FLOOR`] pass
/// through unchanged.
pub fn l2_normalize(v: &[f64]) -> Vec64 {
    let n = norm(v);
    if n < NORM_FLOOR {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn distance(a: &[f64], b: &[f64], metric: Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(GmError::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    match metric {
        Metric::SquaredEuclidean => Ok(squared_euclidean(a, b)),
        Metric::Cosine => {
            let (na, nb) = (norm(a), norm(b));
            if na < NORM_FLOOR || nb < NORM_FLOOR {
                return Err(GmError::ZeroVector);
            }
            let cos = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
            Ok((1.0 - cos).max(0.0))
        }
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec64 = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Elementwise mean of equally sized vectors.
pub fn mean(vectors: &[Vec64]) -> Option<Vec64> {
    let first = vectors.first()?;
    let mut acc = vec![0.0; first.len()];
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Some(acc)
}

/// Row-major matrix of nonnegative matching costs.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    cells: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, cells: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(GmError::Empty("cost matrix"));
        }
        if cells.len() != rows * cols {
            return Err(GmError::Shape(format!(
                "{} cells for a {rows}x{cols} matrix",
                cells.len()
            )));
        }
        if cells.iter().any(|c| !c.is_finite()) {
            return Err(GmError::Shape("cost matrix has non-finite cells".into()));
        }
        Ok(Self { rows, cols, cells })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(GmError::Shape("ragged cost matrix rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Zero-pads to a square matrix of side `max(rows, cols)`.
    pub fn padded_square(&self) -> Self {
        let n = self.rows.max(self.cols);
        let mut cells = vec![0.0; n * n];
        for r in 0..self.rows {
            cells[r * n..r * n + self.cols].copy_from_slice(&self.cells[r * self.cols..(r + 1) * self.cols]);
        }
        Self { rows: n, cols: n, cells }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.cells[r * self.cols + c]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// `row_to_col[r]` is the column matched to row `r`.
    pub row_to_col: Vec<usize>,
    pub total_cost: f64,
}

/// Minimum-cost perfect matching on a square matrix.
///
/// Among all optimal permutations the lexicographically smallest `row_to_col`
/// is returned, so results do not depend on the internal pivoting order.
pub fn hungarian_assign(costs: &CostMatrix) -> Result<Assignment> {
    if costs.rows != costs.cols {
        return Err(GmError::NotSquare { rows: costs.rows, cols: costs.cols });
    }
    let n = costs.rows;
    let a = |r: usize, c: usize| costs.get(r, c);
    let all_rows: Vec<usize> = (0..n).collect();
    let all_cols: Vec<usize> = (0..n).collect();
    let (_, optimum) = solve_sub(&a, &all_rows, &all_cols);

    let scale = costs.cells.iter().fold(0.0f64, |m, c| m.max(c.abs())) * n as f64;
    let tol = 1e-10 * (1.0 + scale);

    let mut row_to_col = Vec::with_capacity(n);
    let mut free_cols = all_cols;
    let mut fixed = 0.0;
    for r in 0..n {
        let rest_rows: Vec<usize> = (r + 1..n).collect();
        let mut chosen = None;
        for (pos, &c) in free_cols.iter().enumerate() {
            let rest_cols: Vec<usize> = free_cols.iter().copied().filter(|&x| x != c).collect();
            let (_, rest) = solve_sub(&a, &rest_rows, &rest_cols);
            if fixed + a(r, c) + rest <= optimum + tol {
                chosen = Some(pos);
                break;
            }
        }
        // The optimum is always reachable from some column; fall back to the
        // cheapest completion if rounding hid it.
        let pos = chosen.unwrap_or_else(|| {
            let mut best = (0, f64::INFINITY);
            for (pos, &c) in free_cols.iter().enumerate() {
                let rest_cols: Vec<usize> = free_cols.iter().copied().filter(|&x| x != c).collect();
                let (_, rest) = solve_sub(&a, &rest_rows, &rest_cols);
                if a(r, c) + rest < best.1 {
                    best = (pos, a(r, c) + rest);
                }
            }
            best.0
        });
        let c = free_cols.remove(pos);
        fixed += a(r, c);
        row_to_col.push(c);
    }
    let total_cost = row_to_col.iter().enumerate().map(|(r, &c)| a(r, c)).sum();
    Ok(Assignment { row_to_col, total_cost })
}

/// O(n³) shortest-augmenting-path solver over a row/column subset.
/// Returns the assignment (indices into `cols`) and its cost.
fn solve_sub(a: &impl Fn(usize, usize) -> f64, rows: &[usize], cols: &[usize]) -> (Vec<usize>, f64) {
    let n = rows.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let inf = f64::INFINITY;
    // 1-based potentials; index 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = a(rows[i0 - 1], cols[j - 1]) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    let cost = assignment.iter().enumerate().map(|(i, &j)| a(rows[i], cols[j])).sum();
    (assignment, cost)
}
