//! Minimum-cost assignment (Hungarian algorithm, potentials formulation).
//!
//! O(n³) over a square cost matrix; rectangular inputs are padded with zero
//! rows/columns, so every real row still receives a column (possibly a
//! phantom one with index ≥ the real width).

use crate::error::EvalError;

/// Returns the column assigned to each row under a total-cost-minimizing
/// injective assignment, together with the total cost over real cells.
///
/// For an R×C input with R > C, rows whose entry is ≥ C were matched to a
/// zero-cost phantom column.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<(Vec<usize>, f64), EvalError> {
    let rows = cost.len();
    if rows == 0 {
        return Err(EvalError::InvalidInput("hungarian: empty cost matrix".into()));
    }
    let cols = cost[0].len();
    if cols == 0 {
        return Err(EvalError::InvalidInput("hungarian: empty cost rows".into()));
    }
    for (i, row) in cost.iter().enumerate() {
        if row.len() != cols {
            return Err(EvalError::InvalidInput(format!(
                "hungarian: row {i} has {} entries, expected {cols}",
                row.len()
            )));
        }
        if row.iter().any(|v| v.is_nan()) {
            return Err(EvalError::InvalidInput(format!(
                "hungarian: NaN cost in row {i}"
            )));
        }
    }
    let n = rows.max(cols);
    let at = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            cost[i][j]
        } else {
            0.0
        }
    };

    // Potentials u (rows) / v (columns) with 1-based sentinel indexing;
    // p[j] is the row matched to column j, way[j] the previous column on
    // the augmenting path.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
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

    let mut assignment = vec![usize::MAX; rows];
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i - 1 < rows {
            assignment[i - 1] = j - 1;
        }
    }
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| if j < cols { cost[i][j] } else { 0.0 })
        .sum();
    Ok((assignment, total))
}
