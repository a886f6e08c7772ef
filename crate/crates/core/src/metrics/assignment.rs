//! Minimum-cost perfect matching on square cost matrices.

/// Exact assignment by shortest augmenting paths with potentials, `O(n^3)`.
///
/// `cost` is row-major `n x n`; returns the column assigned to every row.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be square");
    // 1-based potentials; column 0 is the virtual start
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
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
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
    let mut col_of = vec![0; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            col_of[row_of[j] - 1] = j - 1;
        }
    }
    col_of
}

/// Approximate assignment by the auction algorithm with epsilon scaling.
///
/// The final phase runs with `final_eps`, so the matching cost is within
/// `n * final_eps` of the optimum.
pub fn auction(cost: &[f64], n: usize, final_eps: f64) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be square");
    if n == 0 {
        return Vec::new();
    }
    let max_cost = cost.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let mut price = vec![0.0; n];
    let mut eps = (max_cost / 4.0).max(final_eps);
    loop {
        let mut owner: Vec<Option<usize>> = vec![None; n];
        let mut col_of: Vec<Option<usize>> = vec![None; n];
        let mut free: Vec<usize> = (0..n).rev().collect();
        while let Some(i) = free.pop() {
            // best and second-best value of -cost - price
            let (mut best_j, mut best, mut second) = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for j in 0..n {
                let val = -cost[i * n + j] - price[j];
                if val > best {
                    second = best;
                    best = val;
                    best_j = j;
                } else if val > second {
                    second = val;
                }
            }
            let bid = if second.is_finite() { best - second + eps } else { eps };
            price[best_j] += bid;
            if let Some(prev) = owner[best_j].replace(i) {
                col_of[prev] = None;
                free.push(prev);
            }
            col_of[i] = Some(best_j);
        }
        if eps <= final_eps {
            return col_of.into_iter().map(|c| c.expect("every row is assigned")).collect();
        }
        eps = (eps / 5.0).max(final_eps);
    }
}

/// Total cost of an assignment.
pub fn assignment_cost(cost: &[f64], n: usize, col_of: &[usize]) -> f64 {
    col_of.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum()
}
