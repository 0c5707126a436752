//! Linear assignment solvers for the earth mover's distance.
//!
//! [`hungarian`] is exact (shortest augmenting paths with dual potentials,
//! `O(n³)`). [`auction`] is the ε-scaling forward auction, whose total cost
//! is within `n·ε` of the optimum.

use crate::error::{invalid, Result};

/// Minimum-cost perfect matching on a dense `n×n` row-major cost matrix.
/// Returns `assignment[row] = column`.
pub fn hungarian(cost: &[f64], n: usize) -> Result<Vec<usize>> {
    if cost.len() != n * n {
        return Err(invalid!("cost matrix has {} entries, expected {n}×{n}", cost.len()));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(invalid!("cost matrix contains non-finite entries"));
    }
    // 1-based arrays; column 0 is a virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
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
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    Ok(assignment)
}

/// ε-scaling auction on an implicit cost `cost(row, col)`; stops once the
/// bidding increment reaches `eps_final`.
pub fn auction(n: usize, cost: impl Fn(usize, usize) -> f64, eps_final: f64) -> Result<Vec<usize>> {
    if !(eps_final > 0.0) {
        return Err(invalid!("auction needs a positive final epsilon"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if n == 1 {
        return Ok(vec![0]);
    }
    let mut max_cost: f64 = 0.0;
    for i in (0..n).step_by((n / 64).max(1)) {
        for j in 0..n {
            max_cost = max_cost.max(cost(i, j).abs());
        }
    }
    let mut price = vec![0.0; n];
    let mut eps = (max_cost / 4.0).max(eps_final);
    let mut row_of = vec![usize::MAX; n];
    let mut col_of = vec![usize::MAX; n];
    loop {
        row_of.fill(usize::MAX);
        col_of.fill(usize::MAX);
        let mut queue: Vec<usize> = (0..n).rev().collect();
        while let Some(i) = queue.pop() {
            // Best and second-best value of −cost − price.
            let (mut best_j, mut best, mut second) = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for j in 0..n {
                let val = -cost(i, j) - price[j];
                if val > best {
                    second = best;
                    best = val;
                    best_j = j;
                } else if val > second {
                    second = val;
                }
            }
            price[best_j] += best - second + eps;
            let prev = row_of[best_j];
            if prev != usize::MAX {
                col_of[prev] = usize::MAX;
                queue.push(prev);
            }
            row_of[best_j] = i;
            col_of[i] = best_j;
        }
        if eps <= eps_final {
            break;
        }
        eps = (eps / 5.0).max(eps_final);
    }
    Ok(col_of)
}
