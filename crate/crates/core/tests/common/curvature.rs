//! Ollivier-Ricci curvature against an independent exhaustive oracle.
//!
//! The oracle computes W1 through its Kantorovich dual: the maximum of
//! `sum_v f(v) (mu_x(v) - mu_y(v))` over functions `f` on the union of the
//! two supports that are 1-Lipschitz for the BFS hop metric. Hop distances
//! are integers and the constraints are difference constraints, so an
//! optimal `f` exists with integer values; pinning `f` at one support point
//! to 0 leaves a finite search over `[-3, 3]`.

use std::collections::{BTreeSet, VecDeque};

use giv::graph::Graph;
use giv::tensor::Tensor;

pub fn bfs(adj: &[Vec<usize>], s: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    dist[s] = 0;
    let mut q = VecDeque::from([s]);
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                q.push_back(v);
            }
        }
    }
    dist
}

pub fn lazy_walk(adj: &[Vec<usize>], x: usize, alpha: f64) -> Vec<f64> {
    let mut mu = vec![0.0; adj.len()];
    mu[x] = alpha;
    for &v in &adj[x] {
        mu[v] += (1.0 - alpha) / adj[x].len() as f64;
    }
    mu
}

pub fn dual_w1(support: &[usize], net: &[f64], dist: &[Vec<usize>]) -> f64 {
    fn go(k: usize, f: &mut Vec<i64>, support: &[usize], net: &[f64], dist: &[Vec<usize>], best: &mut f64) {
        if k == support.len() {
            let v: f64 = support.iter().zip(f.iter()).map(|(&s, &fv)| fv as f64 * net[s]).sum();
            *best = best.max(v);
            return;
        }
        for val in -3..=3i64 {
            let ok = (0..k).all(|j| (val - f[j]).unsigned_abs() as usize <= dist[support[k]][support[j]]);
            if ok {
                f.push(val);
                go(k + 1, f, support, net, dist, best);
                f.pop();
            }
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut f = vec![0];
    go(1, &mut f, support, net, dist, &mut best);
    best
}

pub fn oracle_curvature(adj: &[Vec<usize>], x: usize, y: usize, alpha: f64) -> f64 {
    let dist: Vec<Vec<usize>> = (0..adj.len()).map(|s| bfs(adj, s)).collect();
    let (mx, my) = (lazy_walk(adj, x, alpha), lazy_walk(adj, y, alpha));
    let net: Vec<f64> = mx.iter().zip(&my).map(|(a, b)| a - b).collect();
    let support: Vec<usize> = (0..adj.len()).filter(|&v| mx[v] > 0.0 || my[v] > 0.0).collect();
    1.0 - dual_w1(&support, &net, &dist) / dist[x][y] as f64
}

pub fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
    Graph::undirected(Tensor::zeros(n, 1), edges.iter().copied(), vec![0; n]).unwrap()
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// All non-isomorphic simple graphs on `n` nodes without isolated vertices.
pub fn graphs_up_to_iso(n: usize) -> Vec<Vec<(usize, usize)>> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let perms = permutations(n);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for mask in 1u32..(1 << pairs.len()) {
        let edges: Vec<(usize, usize)> =
            pairs.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &p)| p).collect();
        let mut touched = vec![false; n];
        for &(a, b) in &edges {
            touched[a] = true;
            touched[b] = true;
        }
        if touched.iter().any(|t| !t) {
            continue;
        }
        let canon = perms
            .iter()
            .map(|p| {
                let mut e: Vec<(usize, usize)> =
                    edges.iter().map(|&(a, b)| (p[a].min(p[b]), p[a].max(p[b]))).collect();
                e.sort_unstable();
                e
            })
            .min()
            .unwrap();
        if seen.insert(canon) {
            out.push(edges);
        }
    }
    out
}
