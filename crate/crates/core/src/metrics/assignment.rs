//! Minimum-cost perfect matching: exact Hungarian method and an
//! ε-scaling auction with a certified duality gap.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// `columns[i]` is the column matched to row `i`.
    pub columns: Vec<usize>,
    pub cost: f64,
}

fn check(cost: &DMatrix<f64>) -> Result<usize> {
    if cost.nrows() != cost.ncols() {
        return Err(Error::SizeMismatch { left: cost.nrows(), right: cost.ncols() });
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("assignment cost".into()));
    }
    Ok(cost.nrows())
}

fn total(cost: &DMatrix<f64>, columns: &[usize]) -> f64 {
    columns.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum()
}

/// Shortest augmenting path Hungarian method with row/column potentials,
/// O(n^3). Ties resolve to the lowest column index.
pub fn hungarian(cost: &DMatrix<f64>) -> Result<Assignment> {
    let n = check(cost)?;
    if n == 0 {
        return Ok(Assignment { columns: Vec::new(), cost: 0.0 });
    }
    // 1-based arrays with a virtual column 0, as in the classic formulation.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
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
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut columns = vec![0; n];
    for j in 1..=n {
        columns[row_of[j] - 1] = j - 1;
    }
    let cost = total(cost, &columns);
    Ok(Assignment { columns, cost })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuctionResult {
    pub assignment: Assignment,
    /// Dual lower bound on the optimal cost.
    pub lower_bound: f64,
    /// `(cost - lower_bound) / cost`, zero when the cost is zero.
    pub gap: f64,
    pub phases: usize,
}

/// Gauss-Seidel auction on benefits `-cost` with ε-scaling. Phases shrink
/// ε by 5x and stop once the certified relative gap is at most
/// `target_gap`, or when ε can no longer change any price.
pub fn auction(cost: &DMatrix<f64>, target_gap: f64) -> Result<AuctionResult> {
    let n = check(cost)?;
    if !(target_gap >= 0.0) {
        return Err(Error::InvalidArgument(format!("auction gap must be >= 0, got {target_gap}")));
    }
    if n == 0 {
        let assignment = Assignment { columns: Vec::new(), cost: 0.0 };
        return Ok(AuctionResult { assignment, lower_bound: 0.0, gap: 0.0, phases: 0 });
    }
    let scale = cost.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let mut prices = vec![0.0; n];
    let mut eps = (scale / 4.0).max(f64::MIN_POSITIVE);
    let floor = scale * 1e-12 / n as f64;
    let mut phases = 0;
    loop {
        phases += 1;
        let columns = auction_phase(cost, &mut prices, eps);
        let primal = total(cost, &columns);
        // Dual of max sum(-c): sum_i max_j(-c_ij - p_j) + sum_j p_j bounds
        // the benefit from above, hence the cost from below.
        let mut dual = prices.iter().sum::<f64>();
        for i in 0..n {
            let best = (0..n).map(|j| -cost[(i, j)] - prices[j]).fold(f64::NEG_INFINITY, f64::max);
            dual += best;
        }
        let lower_bound = (-dual).min(primal);
        let gap = if primal > 0.0 { (primal - lower_bound) / primal } else { 0.0 };
        if gap <= target_gap || eps <= floor {
            let assignment = Assignment { columns, cost: primal };
            return Ok(AuctionResult { assignment, lower_bound, gap, phases });
        }
        eps /= 5.0;
    }
}

/// One auction run at fixed ε from the given prices.
fn auction_phase(cost: &DMatrix<f64>, prices: &mut [f64], eps: f64) -> Vec<usize> {
    let n = prices.len();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut column_of: Vec<Option<usize>> = vec![None; n];
    let mut queue: std::collections::VecDeque<usize> = (0..n).collect();
    while let Some(i) = queue.pop_front() {
        let (mut best_j, mut best, mut second) = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for j in 0..n {
            let value = -cost[(i, j)] - prices[j];
            if value > best {
                second = best;
                best = value;
                best_j = j;
            } else if value > second {
                second = value;
            }
        }
        let increment = if second.is_finite() { best - second + eps } else { eps };
        prices[best_j] += increment;
        if let Some(prev) = owner[best_j].replace(i) {
            column_of[prev] = None;
            queue.push_back(prev);
        }
        column_of[i] = Some(best_j);
    }
    column_of.into_iter().map(|c| c.expect("every row assigned")).collect()
}
