//! Minimum-cost perfect matching on a square cost matrix (Kuhn-Munkres with
//! potentials, `O(n³)`).

use crate::error::{Error, Result};

/// Returns `assignment[row] = column` and the minimal total cost.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    let n = cost.len();
    if cost.iter().any(|r| r.len() != n) {
        return Err(Error::shape("min_cost_assignment", "cost matrix must be square"));
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::shape("min_cost_assignment", "cost matrix must be finite"));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    // 1-based arrays; column 0 is a virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[matched_row[j] - 1] = j - 1;
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    Ok((assignment, total))
}

/// Assignment maximizing the summed `scores`, for region counts beyond the
/// exhaustive-search guard.
pub fn max_score_assignment(scores: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    let neg: Vec<Vec<f64>> = scores.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
    let (a, c) = min_cost_assignment(&neg)?;
    Ok((a, -c))
}
