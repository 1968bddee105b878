//! Small dense linear algebra used by the evaluators.
//!
//! Matrices are row-major `Vec<Vec<f64>>`; the instances handled here have
//! at most a few dozen states, so nothing fancier is warranted.

use crate::error::{Error, Result};

pub type Matrix = Vec<Vec<f64>>;

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
///
/// Fails with [`Error::Singular`] on a zero pivot and with
/// [`Error::IllConditioned`] when the relative residual
/// `‖a x − b‖∞ / (‖a‖∞ ‖x‖∞ + ‖b‖∞)` exceeds `max_residual`.
pub fn solve_linear(a: &Matrix, b: &[f64], max_residual: f64) -> Result<Vec<f64>> {
    let n = b.len();
    debug_assert!(a.len() == n && a.iter().all(|r| r.len() == n));
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut lu = a.clone();
    let mut rhs = b.to_vec();
    let scale = inf_norm(a);

    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&p, &q| lu[p][col].abs().total_cmp(&lu[q][col].abs()))
            .expect("nonempty range");
        if lu[pivot][col] == 0.0 || lu[pivot][col].abs() <= f64::EPSILON * scale * 1e-3 {
            return Err(Error::Singular);
        }
        lu.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..n {
            let factor = lu[row][col] / lu[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                lu[row][k] -= factor * lu[col][k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }

    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| lu[row][k] * x[k]).sum();
        x[row] = (rhs[row] - tail) / lu[row][row];
    }

    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular);
    }
    let residual = relative_residual(a, &x, b);
    if residual > max_residual {
        return Err(Error::IllConditioned { residual });
    }
    Ok(x)
}

pub fn inf_norm(a: &Matrix) -> f64 {
    a.iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn mat_vec(a: &Matrix, x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(r, v)| r * v).sum())
        .collect()
}

pub fn relative_residual(a: &Matrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = mat_vec(a, x);
    let num = ax
        .iter()
        .zip(b)
        .map(|(l, r)| (l - r).abs())
        .fold(0.0, f64::max);
    let x_norm = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let b_norm = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let den = inf_norm(a) * x_norm + b_norm;
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Transitive closure of a directed graph given as an adjacency matrix.
/// `reach[i][j]` is true iff there is a path of length ≥ 1 from `i` to `j`.
pub fn transitive_closure(adj: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let n = adj.len();
    let mut reach = adj.to_vec();
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    reach
}

pub fn strongly_connected(adj: &[Vec<bool>]) -> bool {
    let n = adj.len();
    if n <= 1 {
        return true;
    }
    let reach = transitive_closure(adj);
    (0..n).all(|i| (0..n).all(|j| i == j || reach[i][j]))
}

/// Summation over a fixed binary tree so that the result depends only on the
/// order of `values`, not on how they were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        len if len <= 8 => values.iter().sum(),
        len => {
            let (l, r) = values.split_at(len / 2);
            pairwise_sum(l) + pairwise_sum(r)
        }
    }
}
