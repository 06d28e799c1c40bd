//! Exact discrete optimal transport (earth mover's distance).
//!
//! Solved as a min-cost flow on the bipartite transportation network with
//! successive shortest paths; Dijkstra runs on reduced costs kept
//! non-negative by node potentials. Supports are small (a node and its
//! neighbors) so the dense `O(V^2)` Dijkstra is adequate.

use crate::error::{Error, Result};

const EPS: f64 = 1e-14;

/// Minimum of `sum f_ij c_ij` over couplings of `supply` and `demand`.
/// Both mass vectors must be non-negative with equal totals.
pub fn earth_movers_distance(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> Result<f64> {
    let (n, m) = (supply.len(), demand.len());
    if cost.len() != n || cost.iter().any(|r| r.len() != m) {
        return Err(Error::dim("transport", format!("cost matrix is not {n} x {m}")));
    }
    if supply.iter().chain(demand).any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::numeric("transport", "masses must be finite and non-negative"));
    }
    let total_s: f64 = supply.iter().sum();
    let total_d: f64 = demand.iter().sum();
    if (total_s - total_d).abs() > 1e-9 * total_s.max(1.0) {
        return Err(Error::Contract(format!("unbalanced transport: {total_s} vs {total_d}")));
    }

    // Node ids: 0 = source, 1..=n supply, n+1..=n+m demand, n+m+1 = sink.
    let (src, sink) = (0, n + m + 1);
    let nodes = n + m + 2;
    let supply_node = |i: usize| 1 + i;
    let demand_node = |j: usize| 1 + n + j;

    let mut left = supply.to_vec();
    let mut need = demand.to_vec();
    let mut flow = vec![vec![0.0; m]; n];
    let mut pot = vec![0.0; nodes];

    while left.iter().any(|&v| v > EPS) && need.iter().any(|&v| v > EPS) {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut prev = vec![usize::MAX; nodes];
        let mut done = vec![false; nodes];
        dist[src] = 0.0;
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for (v, &d) in dist.iter().enumerate() {
                if !done[v] && d < best {
                    best = d;
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            let relax = |v: usize, c: f64, dist: &mut Vec<f64>, prev: &mut Vec<usize>| {
                let rc = (c + pot[u] - pot[v]).max(0.0);
                if dist[u] + rc < dist[v] {
                    dist[v] = dist[u] + rc;
                    prev[v] = u;
                }
            };
            if u == src {
                for i in 0..n {
                    if left[i] > EPS {
                        relax(supply_node(i), 0.0, &mut dist, &mut prev);
                    }
                }
            } else if u <= n {
                let i = u - 1;
                for j in 0..m {
                    relax(demand_node(j), cost[i][j], &mut dist, &mut prev);
                }
            } else if u < sink {
                let j = u - 1 - n;
                for i in 0..n {
                    if flow[i][j] > EPS {
                        relax(supply_node(i), -cost[i][j], &mut dist, &mut prev);
                    }
                }
                if need[j] > EPS {
                    relax(sink, 0.0, &mut dist, &mut prev);
                }
            }
        }
        if !dist[sink].is_finite() {
            return Err(Error::Internal("transport: no augmenting path".into()));
        }
        let cap = dist[sink];
        for v in 0..nodes {
            pot[v] += dist[v].min(cap);
        }

        // Bottleneck along sink <- ... <- source.
        let mut amount = f64::INFINITY;
        let mut v = sink;
        while v != src {
            let u = prev[v];
            if u == src {
                amount = amount.min(left[v - 1]);
            } else if v == sink {
                amount = amount.min(need[u - 1 - n]);
            } else if u > n {
                amount = amount.min(flow[v - 1][u - 1 - n]);
            }
            v = u;
        }
        if !(amount > 0.0) {
            return Err(Error::Internal("transport: zero augmentation".into()));
        }
        let mut v = sink;
        while v != src {
            let u = prev[v];
            if u == src {
                left[v - 1] -= amount;
            } else if v == sink {
                need[u - 1 - n] -= amount;
            } else if u <= n {
                flow[u - 1][v - 1 - n] += amount;
            } else {
                flow[v - 1][u - 1 - n] -= amount;
            }
            v = u;
        }
    }

    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            total += flow[i][j] * cost[i][j];
        }
    }
    Ok(total)
}
