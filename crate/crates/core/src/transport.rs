//! Dense max-profit transportation problem, solved exactly by successive
//! shortest paths with Dijkstra on reduced costs.
//!
//! Supplies and demands are arbitrary nonnegative reals with equal totals,
//! every (source, sink) arc is present and uncapacitated. Each augmentation
//! exhausts a supply, a demand or a reverse arc, so the number of
//! augmentations is small in practice and every Dijkstra run is `O(n m)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Optimal plan of a transportation problem.
#[derive(Clone, Debug)]
pub struct TransportPlan {
    /// `n × m` nonnegative flows with the requested marginals.
    pub flow: DMatrix<f64>,
    /// `Σ profit_ij · flow_ij`.
    pub value: f64,
}

/// `max Σ profit_ij x_ij` subject to `Σ_j x_ij = supply_i`,
/// `Σ_i x_ij = demand_j`, `x ≥ 0`.
pub fn max_profit_transport(profit: &DMatrix<f64>, supply: &[f64], demand: &[f64]) -> Result<TransportPlan> {
    let (n, m) = profit.shape();
    if supply.len() != n || demand.len() != m {
        return Err(Error::dim("transport marginals do not match the profit matrix"));
    }
    if supply.iter().chain(demand).any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Transport("marginals must be finite and nonnegative".into()));
    }
    if profit.iter().any(|v| !v.is_finite()) {
        return Err(Error::Transport("profit matrix has non-finite entries".into()));
    }
    let total_s: f64 = supply.iter().sum();
    let total_d: f64 = demand.iter().sum();
    let scale = total_s.max(total_d).max(f64::MIN_POSITIVE);
    if (total_s - total_d).abs() > 1e-9 * scale {
        return Err(Error::Transport(format!("unbalanced marginals: {total_s} vs {total_d}")));
    }
    let eps = 1e-15 * scale;

    // Minimise cost = −profit. Potentials keep reduced costs nonnegative:
    // rc(i→j) = cost_ij + u_i − v_j on forward arcs, −rc on reverse arcs.
    let cost = |i: usize, j: usize| -profit[(i, j)];
    let mut u = vec![0.0; n];
    let mut v: Vec<f64> = (0..m)
        .map(|j| (0..n).map(|i| cost(i, j)).fold(f64::INFINITY, f64::min))
        .collect();
    if n == 0 || m == 0 {
        return Ok(TransportPlan { flow: DMatrix::zeros(n, m), value: 0.0 });
    }
    let mut s_left = supply.to_vec();
    let mut d_left = demand.to_vec();
    let mut flow = DMatrix::zeros(n, m);

    let max_aug = 4 * (n + m) * (n + m) + 16;
    for _ in 0..max_aug {
        if s_left.iter().all(|&s| s <= eps) || d_left.iter().all(|&d| d <= eps) {
            break;
        }
        // Multi-source Dijkstra from sources with remaining supply.
        let mut dist_s = vec![f64::INFINITY; n];
        let mut dist_t = vec![f64::INFINITY; m];
        let mut prev_t = vec![usize::MAX; m]; // source feeding sink j
        let mut prev_s = vec![usize::MAX; n]; // sink feeding source i via reverse arc
        let mut done_s = vec![false; n];
        let mut done_t = vec![false; m];
        for i in 0..n {
            if s_left[i] > eps {
                dist_s[i] = 0.0;
            }
        }
        let target = loop {
            // Pick the closest unfinished node (sources and sinks together).
            let mut best = f64::INFINITY;
            let mut pick: Option<(bool, usize)> = None;
            for i in 0..n {
                if !done_s[i] && dist_s[i] < best {
                    best = dist_s[i];
                    pick = Some((true, i));
                }
            }
            for j in 0..m {
                if !done_t[j] && dist_t[j] < best {
                    best = dist_t[j];
                    pick = Some((false, j));
                }
            }
            let Some((is_source, k)) = pick else {
                break None;
            };
            if is_source {
                done_s[k] = true;
                for j in 0..m {
                    if done_t[j] {
                        continue;
                    }
                    let rc = (cost(k, j) + u[k] - v[j]).max(0.0);
                    if best + rc < dist_t[j] {
                        dist_t[j] = best + rc;
                        prev_t[j] = k;
                    }
                }
            } else {
                done_t[k] = true;
                if d_left[k] > eps {
                    break Some(k);
                }
                for i in 0..n {
                    if done_s[i] || flow[(i, k)] <= 0.0 {
                        continue;
                    }
                    let rc = (-(cost(i, k) + u[i] - v[k])).max(0.0);
                    if best + rc < dist_s[i] {
                        dist_s[i] = best + rc;
                        prev_s[i] = k;
                    }
                }
            }
        };
        let Some(t) = target else {
            return Err(Error::Transport("no augmenting path with remaining demand".into()));
        };
        let reach = dist_t[t];
        // Potential update keeps reduced costs nonnegative.
        for i in 0..n {
            u[i] += dist_s[i].min(reach) - reach;
        }
        for j in 0..m {
            v[j] += dist_t[j].min(reach) - reach;
        }
        // Bottleneck along the path.
        let mut amount = d_left[t];
        let mut j = t;
        loop {
            let i = prev_t[j];
            if prev_s[i] == usize::MAX {
                amount = amount.min(s_left[i]);
                break;
            }
            let jj = prev_s[i];
            amount = amount.min(flow[(i, jj)]);
            j = jj;
        }
        // Augment.
        let mut j = t;
        loop {
            let i = prev_t[j];
            flow[(i, j)] += amount;
            if prev_s[i] == usize::MAX {
                s_left[i] -= amount;
                break;
            }
            let jj = prev_s[i];
            flow[(i, jj)] -= amount;
            if flow[(i, jj)] < eps * 1e-3 {
                flow[(i, jj)] = 0.0;
            }
            j = jj;
        }
        d_left[t] -= amount;
    }
    if s_left.iter().any(|&s| s > 1e-9 * scale) {
        return Err(Error::Transport("augmentation limit reached".into()));
    }
    let value = profit.iter().zip(flow.iter()).map(|(p, x)| p * x).sum();
    Ok(TransportPlan { flow, value })
}
