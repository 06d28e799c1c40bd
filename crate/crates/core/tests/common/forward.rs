//! Plain-loop forward passes for every model family on small graphs,
//! written directly from the layer definitions.

use giv::graph::Graph;
use giv::info::ollivier_ricci;
use giv::models::{Family, Model, ModelSpec, ParamStore};
use giv::rng::Rng;
use giv::tensor::Tensor;
pub type M = Vec<Vec<f64>>;

pub fn mat(t: &Tensor) -> M {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn mm(a: &M, b: &M) -> M {
    a.iter()
        .map(|row| (0..b[0].len()).map(|j| row.iter().zip(b).map(|(x, br)| x * br[j]).sum()).collect())
        .collect()
}

pub fn plus_bias(a: &M, b: &M) -> M {
    a.iter().map(|r| r.iter().zip(&b[0]).map(|(x, y)| x + y).collect()).collect()
}

pub fn map(a: &M, f: impl Fn(f64) -> f64) -> M {
    a.iter().map(|r| r.iter().map(|&v| f(v)).collect()).collect()
}

pub fn elu(v: f64) -> f64 {
    if v > 0.0 { v } else { v.exp() - 1.0 }
}

pub fn edges(m: &Model) -> Vec<(usize, usize)> {
    m.graph().edges().pairs().collect()
}

/// Plain exp/sum normalization over edges sharing a target, per column.
pub fn softmax_by_target(scores: &M, edges: &[(usize, usize)], n: usize) -> M {
    let d = scores[0].len();
    let mut denom = vec![vec![0.0; d]; n];
    for (s, &(_, t)) in scores.iter().zip(edges) {
        for c in 0..d {
            denom[t][c] += s[c].exp();
        }
    }
    scores.iter().zip(edges).map(|(s, &(_, t))| (0..d).map(|c| s[c].exp() / denom[t][c]).collect()).collect()
}

/// `out_i = sum over edges (j -> i) of tau ⊙ z_j`, `tau` broadcast when it has one column.
pub fn aggregate(z: &M, tau: &M, edges: &[(usize, usize)], n: usize) -> M {
    let d = z[0].len();
    let mut out = vec![vec![0.0; d]; n];
    for (k, &(s, t)) in edges.iter().enumerate() {
        for c in 0..d {
            let w = if tau[k].len() == 1 { tau[k][0] } else { tau[k][c] };
            out[t][c] += w * z[s][c];
        }
    }
    out
}

pub fn mlp(e: &M, p: &ParamStore, prefix: &str) -> M {
    let g = |n: &str| mat(p.get(&format!("{prefix}.lts.{n}")).unwrap());
    let a = map(&plus_bias(&mm(e, &g("w1")), &g("b1")), |v| v.max(0.0));
    plus_bias(&mm(&a, &g("w2")), &g("b2"))
}

pub fn oracle_curvgn(m: &Model) -> (M, Vec<M>) {
    let (es, n, p) = (edges(m), m.graph().n_nodes(), m.params());
    let info = mat(m.effective_info().unwrap());
    let mut h = mat(m.graph().features());
    let mut taus = Vec::new();
    for l in 0..2 {
        let z = mm(&h, &mat(p.get(&format!("l{l}.w")).unwrap()));
        let tau = softmax_by_target(&mlp(&info, p, &format!("l{l}")), &es, n);
        let agg = aggregate(&z, &tau, &es, n);
        h = if l == 0 { map(&agg, elu) } else { agg };
        taus.push(tau);
    }
    (h, taus)
}

pub fn oracle_gat(m: &Model) -> M {
    let (es, n, p, spec) = (edges(m), m.graph().n_nodes(), m.params(), m.spec());
    let mut h = mat(m.graph().features());
    for l in 0..2 {
        let (heads, f) = if l == 0 { (spec.heads, spec.hidden) } else { (spec.output_heads, m.n_classes()) };
        let z = mm(&h, &mat(p.get(&format!("l{l}.w")).unwrap()));
        let mut outs = Vec::new();
        for k in 0..heads {
            let zk: M = z.iter().map(|r| r[k * f..(k + 1) * f].to_vec()).collect();
            let a = mat(p.get(&format!("l{l}.a{k}")).unwrap());
            let scores: M = es
                .iter()
                .map(|&(s, t)| {
                    let e: Vec<f64> = zk[t].iter().chain(&zk[s]).copied().collect();
                    let v: f64 = e.iter().zip(&a).map(|(x, ar)| x * ar[0]).sum();
                    vec![if v > 0.0 { v } else { 0.2 * v }]
                })
                .collect();
            outs.push(aggregate(&zk, &softmax_by_target(&scores, &es, n), &es, n));
        }
        let b = mat(p.get(&format!("l{l}.b")).unwrap());
        h = if l == 0 {
            let cat: M = (0..n).map(|i| outs.iter().flat_map(|o| o[i].clone()).collect()).collect();
            map(&plus_bias(&cat, &b), elu)
        } else {
            let mean: M = (0..n)
                .map(|i| (0..f).map(|c| outs.iter().map(|o| o[i][c]).sum::<f64>() / heads as f64).collect())
                .collect();
            plus_bias(&mean, &b)
        };
    }
    h
}

/// Hyperboloid maps at the origin written from the closed forms.
pub fn hyp_exp(u: &[f64], k: f64) -> Vec<f64> {
    let sk = k.sqrt();
    let r = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut out = vec![sk * (r / sk).cosh()];
    out.extend(u.iter().map(|v| if r == 0.0 { 0.0 } else { sk * (r / sk).sinh() / r * v }));
    out
}

pub fn hyp_log(x: &[f64], k: f64) -> Vec<f64> {
    let sk = k.sqrt();
    // Distance to the origin from the time coordinate.
    let d = sk * (x[0] / sk).max(1.0).acosh();
    let r = x[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
    x[1..].iter().map(|v| if r == 0.0 { 0.0 } else { d / r * v }).collect()
}

pub fn oracle_hgcn(m: &Model) -> M {
    let (es, n, p, k) = (edges(m), m.graph().n_nodes(), m.params(), m.spec().hyperbolic_k);
    let mut h: M = mat(m.graph().features()).iter().map(|r| hyp_exp(r, k)).collect();
    for l in 0..2 {
        let u: M = h.iter().map(|x| hyp_log(x, k)).collect();
        let v = mm(&u, &mat(p.get(&format!("l{l}.w")).unwrap()));
        let t: M = v.iter().map(|r| hyp_log(&hyp_exp(r, k), k)).collect();
        let e: M = es.iter().map(|&(s, tg)| t[tg].iter().chain(&t[s]).copied().collect()).collect();
        let tau = softmax_by_target(&mlp(&e, p, &format!("l{l}")), &es, n);
        h = aggregate(&t, &tau, &es, n).iter().map(|r| hyp_exp(r, k)).collect();
    }
    h.iter().map(|x| hyp_log(x, k)).collect()
}

pub fn oracle_agnn(m: &Model) -> M {
    let (es, n, p) = (edges(m), m.graph().n_nodes(), m.params());
    let x = mat(m.graph().features());
    let mut h = map(&plus_bias(&mm(&x, &mat(p.get("fc0.w").unwrap())), &mat(p.get("fc0.b").unwrap())), |v| v.max(0.0));
    for q in 0..m.spec().propagation_layers {
        let beta = p.get(&format!("prop{q}.beta")).unwrap().data()[0];
        let norm = |r: &Vec<f64>| r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scores: M = es
            .iter()
            .map(|&(s, t)| {
                let (a, b) = (&h[t], &h[s]);
                let denom = norm(a) * norm(b);
                let cos = if denom == 0.0 { 0.0 } else { a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / denom };
                vec![beta * cos]
            })
            .collect();
        h = aggregate(&h, &softmax_by_target(&scores, &es, n), &es, n);
    }
    plus_bias(&mm(&h, &mat(p.get("fc1.w").unwrap())), &mat(p.get("fc1.b").unwrap()))
}

pub fn oracle_gcn(m: &Model) -> M {
    let (es, n, p) = (edges(m), m.graph().n_nodes(), m.params());
    let mut deg = vec![0.0; n];
    for &(_, t) in &es {
        deg[t] += 1.0;
    }
    let w: M = es.iter().map(|&(s, t)| vec![1.0 / (deg[s] * deg[t] as f64).sqrt()]).collect();
    let mut h = mat(m.graph().features());
    for l in 0..2 {
        let z = mm(&h, &mat(p.get(&format!("l{l}.w")).unwrap()));
        let agg = plus_bias(&aggregate(&z, &w, &es, n), &mat(p.get(&format!("l{l}.b")).unwrap()));
        h = if l == 0 { map(&agg, |v| v.max(0.0)) } else { agg };
    }
    h
}

/// 4 nodes: path 0-1-2-3 plus chord 1-3; three features; three classes.
pub fn small_graph() -> Graph {
    let f = Tensor::from_rows(&[
        vec![0.3, -0.2, 0.5],
        vec![0.1, 0.4, -0.3],
        vec![-0.6, 0.2, 0.1],
        vec![0.2, 0.2, 0.7],
    ])
    .unwrap();
    Graph::undirected(f, [(0, 1), (1, 2), (2, 3), (1, 3)], vec![0, 1, 2, 1]).unwrap()
}

pub fn small_spec(family: Family) -> ModelSpec {
    ModelSpec { hidden: 3, lts_hidden: 4, heads: 2, output_heads: 2, init_seed: 5, ..ModelSpec::new(family) }
}

/// Re-draws every parameter (biases included) so no term is trivially zero.
pub fn scramble(m: &mut Model, seed: u64) {
    let mut rng = Rng::new(seed);
    for t in m.params_mut().tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = rng.uniform_range(-1.0, 1.0));
    }
}

pub fn build(family: Family, spec: &ModelSpec) -> Model {
    let g = small_graph();
    let info = if family.uses_external_info() { Some(ollivier_ricci(&g, 0.5).unwrap()) } else { None };
    Model::build(spec, &g, info.as_ref()).unwrap()
}

pub fn assert_close(got: &Tensor, want: &M, tol: f64) {
    assert_eq!(got.rows(), want.len());
    for (r, w) in want.iter().enumerate() {
        for (c, &v) in w.iter().enumerate() {
            let g = got.get(r, c);
            assert!((g - v).abs() <= tol, "({r},{c}): {g} vs {v}");
        }
    }
}

pub fn max_err(got: &Tensor, want: &M) -> f64 {
    assert_eq!(got.rows(), want.len());
    let mut worst = 0.0f64;
    for (r, w) in want.iter().enumerate() {
        for (c, &v) in w.iter().enumerate() {
            worst = worst.max((got.get(r, c) - v).abs());
        }
    }
    worst
}
