//! Ollivier-Ricci curvature of graph edges.
//!
//! For an edge `(x, y)` the lazy random-walk measure `mu_x` puts mass
//! `alpha` on `x` and `(1 - alpha) / deg(x)` on each neighbor. The curvature
//! is `1 - W1(mu_x, mu_y) / d(x, y)` with `d` the hop distance and `W1`
//! solved exactly as a transportation problem.

use super::transport::earth_movers_distance;
use crate::error::{Error, Result};
use crate::graph::Graph;

pub const DEFAULT_ALPHA: f64 = 0.5;

fn sorted_neighbors(g: &Graph) -> Vec<Vec<usize>> {
    let mut adj = g.adjacency();
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

fn has_common(a: &[usize], b: &[usize]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

/// Hop distance between `u` and `v` when both lie within one hop of the two
/// endpoints of an edge, so it never exceeds 3.
fn local_distance(adj: &[Vec<usize>], u: usize, v: usize) -> f64 {
    if u == v {
        0.0
    } else if adj[u].binary_search(&v).is_ok() {
        1.0
    } else if has_common(&adj[u], &adj[v]) {
        2.0
    } else {
        3.0
    }
}

fn measure(adj: &[Vec<usize>], x: usize, alpha: f64) -> (Vec<usize>, Vec<f64>) {
    let deg = adj[x].len();
    let mut support = vec![x];
    support.extend(&adj[x]);
    let mut mass = vec![alpha];
    mass.extend(std::iter::repeat_n((1.0 - alpha) / deg as f64, deg));
    (support, mass)
}

/// Curvature of the undirected edge `{x, y}`.
pub(crate) fn edge_curvature(adj: &[Vec<usize>], x: usize, y: usize, alpha: f64) -> Result<f64> {
    if adj[x].is_empty() || adj[y].is_empty() {
        return Err(Error::Internal(format!("edge ({x},{y}) has an isolated endpoint")));
    }
    let (sx, mx) = measure(adj, x, alpha);
    let (sy, my) = measure(adj, y, alpha);
    let cost: Vec<Vec<f64>> =
        sx.iter().map(|&u| sy.iter().map(|&v| local_distance(adj, u, v)).collect()).collect();
    let w1 = earth_movers_distance(&mx, &my, &cost)?;
    let d = local_distance(adj, x, y);
    Ok(1.0 - w1 / d)
}

/// One curvature value per edge of `g` in edge order; appended self-loops
/// get zero. Both directions of an undirected edge share a value.
pub fn curvature_per_edge(g: &Graph, alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Contract(format!("curvature alpha {alpha} outside [0, 1)")));
    }
    let adj = sorted_neighbors(g);
    let mut cache = std::collections::HashMap::new();
    let mut out = vec![0.0; g.n_edges()];
    for e in g.non_loop_range() {
        let (s, t) = (g.edges().sources()[e], g.edges().targets()[e]);
        let key = (s.min(t), s.max(t));
        let k = match cache.get(&key) {
            Some(&k) => k,
            None => {
                let k = edge_curvature(&adj, key.0, key.1, alpha)?;
                cache.insert(key, k);
                k
            }
        };
        out[e] = k;
    }
    Ok(out)
}
