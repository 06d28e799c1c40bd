//! Acceptance criteria, one PASS/FAIL line each. Dataset criteria read
//! `$GIV_DATA_DIR/{cora,citeseer}/{nodes.csv,edges.csv}` (default: `data/`
//! at the workspace root). The process exits nonzero if any line fails.

mod common;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use giv::diagnostics::{column_fluctuation, cosine_similarity, to_vector, weights_from_rows, WeightVector};
use giv::graph::{load_graph, make_split, Graph, Split};
use giv::info::{curvature_per_edge, ollivier_ricci, permute_info, random_info, GraphInfo};
use giv::models::{to_explicit, Family, GcnWeights, Mode, Model, ModelSpec, Randomization, HIDDEN_LAYER};
use giv::rng::Rng;
use giv::tensor::{Tape, Tensor};
use giv::trainer::{averaged_weights_all, repeat_runs, train_one, AveragedWeights, RunSummary, TrainConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Outcome {
    Outcome { pass: true, detail: detail.into() }
}

fn fail(detail: impl Into<String>) -> Outcome {
    Outcome { pass: false, detail: detail.into() }
}

fn judge(ok: bool, detail: String) -> Outcome {
    Outcome { pass: ok, detail }
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn data_dir() -> PathBuf {
    std::env::var_os("GIV_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data")))
}

struct Data {
    graph: Arc<Graph>,
    split: Split,
    curvature: Arc<GraphInfo>,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum V {
    Base,
    Perm(u64),
    Rand(u64),
    Explicit,
    Ones,
}

/// Lazily trains and caches every (dataset, family, variant) cell.
struct Lab {
    data: HashMap<&'static str, Result<Data, String>>,
    summaries: HashMap<(&'static str, Family, V), Result<RunSummary, String>>,
    weights: HashMap<(&'static str, Family, V), Result<AveragedWeights, String>>,
}

impl Lab {
    fn new() -> Self {
        Lab { data: HashMap::new(), summaries: HashMap::new(), weights: HashMap::new() }
    }

    fn data(&mut self, name: &'static str) -> Result<&Data, String> {
        if !self.data.contains_key(name) {
            let dir = data_dir().join(name);
            let loaded = (|| {
                let nodes = dir.join("nodes.csv");
                if !nodes.exists() {
                    return Err(format!("dataset not found: {} missing", nodes.display()));
                }
                let g = load_graph(nodes, dir.join("edges.csv")).map_err(|e| e.to_string())?;
                let g = g.with_row_normalized_features();
                let split = make_split(&g, 0).map_err(|e| e.to_string())?;
                let curvature = ollivier_ricci(&g, 0.5).map_err(|e| e.to_string())?;
                Ok(Data { graph: Arc::new(g), split, curvature: Arc::new(curvature) })
            })();
            self.data.insert(name, loaded);
        }
        self.data[name].as_ref().map_err(Clone::clone)
    }

    fn spec(family: Family, v: V) -> ModelSpec {
        let mut spec = ModelSpec::new(family);
        match (family, v) {
            (Family::GCN, V::Perm(seed)) => spec.gcn_weights = GcnWeights::Permuted { seed },
            (Family::GCN, V::Ones) => spec.gcn_weights = GcnWeights::Ones,
            (_, V::Perm(seed)) => spec.randomization = Randomization::Permuted { seed },
            (_, V::Rand(seed)) => spec.randomization = Randomization::Random { seed, resample_per_epoch: false },
            _ => {}
        }
        spec
    }

    fn averaged(&mut self, ds: &'static str, family: Family, v: V) -> Result<AveragedWeights, String> {
        let key = (ds, family, v);
        if !self.weights.contains_key(&key) {
            let got = (|| {
                let d = self.data(ds)?;
                let info = family.uses_external_info().then(|| d.curvature.as_ref());
                let cfg = TrainConfig::for_family(family);
                averaged_weights_all(&Self::spec(family, v), &d.graph, info, &d.split, &cfg, cfg.weight_runs)
                    .map_err(|e| e.to_string())
            })();
            self.weights.insert(key, got);
        }
        self.weights[&key].clone()
    }

    fn mean(&mut self, ds: &'static str, family: Family, v: V) -> Result<f64, String> {
        let key = (ds, family, v);
        if !self.summaries.contains_key(&key) {
            let got = (|| {
                let mut spec = Self::spec(family, v);
                if v == V::Explicit {
                    let avg = self.averaged(ds, family, V::Base)?;
                    spec = to_explicit(&spec, avg.layers).map_err(|e| e.to_string())?;
                }
                let d = self.data(ds)?;
                let info = family.uses_external_info().then(|| d.curvature.as_ref());
                let cfg = TrainConfig::for_family(family);
                repeat_runs(&spec, &d.graph, info, &d.split, &cfg, cfg.runs).map_err(|e| e.to_string())
            })();
            self.summaries.insert(key, got);
        }
        match &self.summaries[&key] {
            Ok(s) if s.completed == 0 => Err(format!("all {} runs failed", s.failed)),
            Ok(s) => Ok(s.mean),
            Err(e) => Err(e.clone()),
        }
    }
}

fn criterion_1(lab: &mut Lab) -> Outcome {
    let d = match lab.data("cora") {
        Ok(d) => d,
        Err(e) => return fail(e),
    };
    let cfg = TrainConfig::for_family(Family::GCN);
    let spec = ModelSpec::new(Family::GCN);
    let start = Instant::now();
    let mut slowest = Duration::ZERO;
    let mut runs = Vec::new();
    for seed in cfg.seeds(cfg.runs) {
        let t = Instant::now();
        match train_one(&spec, &d.graph, None, &d.split, &cfg, seed) {
            Ok((_, r)) => runs.push(r),
            Err(e) => return fail(e.to_string()),
        }
        slowest = slowest.max(t.elapsed());
    }
    let sweep = start.elapsed();
    let s = RunSummary::from_runs(runs);
    let ok = s.completed > 0
        && (100.0 * s.mean - 81.44).abs() <= 2.5
        && slowest <= Duration::from_secs(180)
        && sweep <= Duration::from_secs(90 * 60);
    lab.summaries.insert(("cora", Family::GCN, V::Base), Ok(s.clone()));
    judge(
        ok,
        format!(
            "GCN Cora {}±{} over {} runs (target 81.44 ± 2.5); slowest run {:.1} s (≤ 180), sweep {:.1} min (≤ 90)",
            pct(s.mean),
            pct(s.std),
            s.completed,
            slowest.as_secs_f64(),
            sweep.as_secs_f64() / 60.0
        ),
    )
}

const PARITY: [Family; 3] = [Family::GAT, Family::CurvGN, Family::AGNN];
const DATASETS: [&str; 2] = ["cora", "citeseer"];

fn parity(lab: &mut Lab, variants: &[(V, &str)], tol: f64, families: &[Family]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for ds in DATASETS {
        for &family in families {
            let base = match lab.mean(ds, family, V::Base) {
                Ok(m) => m,
                Err(e) => return fail(format!("{ds}/{family}: {e}")),
            };
            for &(v, name) in variants {
                match lab.mean(ds, family, v) {
                    Ok(m) => {
                        let gap = 100.0 * (m - base).abs();
                        ok &= gap <= tol;
                        parts.push(format!("{ds}/{family}{name} {gap:.2}"));
                    }
                    Err(e) => return fail(format!("{ds}/{family}{name}: {e}")),
                }
            }
        }
    }
    judge(ok, format!("max gap ≤ {tol} points: {}", parts.join(", ")))
}

fn criterion_4(lab: &mut Lab) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for family in [Family::GAT, Family::CurvGN] {
        let pair = lab.averaged("cora", family, V::Base).and_then(|a| Ok((a, lab.averaged("cora", family, V::Rand(2020))?)));
        let (a, b) = match pair {
            Ok(p) => p,
            Err(e) => return fail(format!("cora/{family}: {e}")),
        };
        let layer = HIDDEN_LAYER - 1;
        let sim = cosine_similarity(&to_vector(&a.layers[layer], family.name()), &to_vector(&b.layers[layer], "rand"));
        match sim {
            Ok(s) => {
                ok &= s >= 0.99;
                parts.push(format!("{family} {s:.4}"));
            }
            Err(e) => return fail(e.to_string()),
        }
    }
    judge(ok, format!("cosineSIM base vs Rand, hidden layer, 50-run average ≥ 0.99: {}", parts.join(", ")))
}

fn criterion_5(lab: &mut Lab) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for family in [Family::CurvGN, Family::GAT] {
        match lab.averaged("cora", family, V::Base) {
            Ok(a) => {
                let c = column_fluctuation(&a.layers[HIDDEN_LAYER - 1]);
                ok &= c <= 1e-2;
                parts.push(format!("{family} {c:.2e}"));
            }
            Err(e) => return fail(format!("cora/{family}: {e}")),
        }
    }
    judge(ok, format!("C(A) ≤ 1e-2 on Cora hidden layer: {}", parts.join(", ")))
}

fn criterion_6(lab: &mut Lab) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for ds in DATASETS {
        let base = match lab.mean(ds, Family::GCN, V::Base) {
            Ok(m) => m,
            Err(e) => return fail(format!("{ds}/GCN: {e}")),
        };
        let mut worst_perm = f64::NEG_INFINITY;
        for (seed, name) in [(0, "A"), (10, "B"), (100, "C")] {
            match lab.mean(ds, Family::GCN, V::Perm(seed)) {
                Ok(m) => {
                    let drop = 100.0 * (base - m);
                    ok &= drop >= 5.0;
                    worst_perm = worst_perm.max(m);
                    parts.push(format!("{ds} GCN_{name} -{drop:.2}"));
                }
                Err(e) => return fail(format!("{ds}/GCN_{name}: {e}")),
            }
        }
        if ds == "cora" {
            match lab.mean(ds, Family::GCN, V::Ones) {
                Ok(m) => {
                    ok &= m > worst_perm && m < base;
                    parts.push(format!("cora GCN_1 {} in ({}, {})", pct(m), pct(worst_perm), pct(base)));
                }
                Err(e) => return fail(format!("cora/GCN_1: {e}")),
            }
        }
    }
    judge(ok, format!("permuted GCN drops ≥ 5 points, GCN_1 strictly between: {}", parts.join(", ")))
}

fn criterion_7(lab: &mut Lab) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for family in [Family::GAT, Family::CurvGN] {
        let pair = lab.mean("cora", family, V::Base).and_then(|b| Ok((b, lab.mean("cora", family, V::Explicit)?)));
        match pair {
            Ok((b, e)) => {
                let gap = 100.0 * (b - e).abs();
                ok &= gap <= 1.5;
                parts.push(format!("{family}_E {} vs {} (gap {gap:.2})", pct(e), pct(b)));
            }
            Err(e) => return fail(format!("cora/{family}_E: {e}")),
        }
    }
    judge(ok, format!("explicit within 1.5 points on Cora: {}", parts.join(", ")))
}

fn criterion_9(lab: &mut Lab) -> Outcome {
    let pair = lab.mean("cora", Family::HGCN, V::Base).and_then(|b| Ok((b, lab.mean("cora", Family::HGCN, V::Rand(2020))?)));
    match pair {
        Ok((b, r)) => {
            let gap = 100.0 * (b - r).abs();
            judge(
                b >= 0.75 && gap <= 1.5,
                format!("HGCN Cora {} (≥ 75), RandHGCN {} (gap {gap:.2} ≤ 1.5)", pct(b), pct(r)),
            )
        }
        Err(e) => fail(format!("cora/HGCN: {e}")),
    }
}

/// Property checks through the public API, all at their exact tolerances.
fn criterion_8() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut check = |name: &str, r: Result<(), String>| {
        if let Err(e) = r {
            failures.push(format!("{name}: {e}"));
        }
    };
    check("autodiff", autodiff_fd());
    check("segment_softmax", softmax_normalization());
    check("hyperbolic", hyperbolic_round_trips());
    check("curvature oracle", curvature_oracle());
    check("curvature signs", curvature_signs());
    check("permutation multiset", permutation_multiset());
    check("metric examples", metric_examples());
    check("forward oracles", forward_oracles());
    let took = start.elapsed();
    if took > Duration::from_secs(120) {
        failures.push(format!("suite took {:.1} s (> 120)", took.as_secs_f64()));
    }
    if failures.is_empty() {
        pass(format!("all property checks hold ({:.1} s)", took.as_secs_f64()))
    } else {
        fail(failures.join("; "))
    }
}

/// Central differences of the training loss with respect to every parameter
/// of every family on the 4-node graph, relative error ≤ 1e-4.
fn autodiff_fd() -> Result<(), String> {
    const H: f64 = 1e-5;
    let rows: Arc<[usize]> = vec![0, 1, 2, 3].into();
    let labels: Arc<[usize]> = vec![0, 1, 2, 1].into();
    let loss_of = |m: &Model| -> (f64, Vec<Option<Tensor>>) {
        let mut tape = Tape::new();
        let vars = m.params().bind(&mut tape);
        let out = m.forward(&mut tape, &vars, &mut Mode::Eval).unwrap();
        let logp = tape.log_softmax_rows(out.logits);
        let loss = tape.nll_loss(logp, rows.clone(), labels.clone()).unwrap();
        let value = tape.value(loss).data()[0];
        let mut g = tape.backward(loss).unwrap();
        (value, vars.iter().map(|&v| g.take(v)).collect())
    };
    for family in Family::ALL {
        let mut m = common::forward::build(family, &common::forward::small_spec(family));
        common::forward::scramble(&mut m, 11);
        let (_, grads) = loss_of(&m);
        for p in 0..m.params().len() {
            for j in 0..m.params().tensors()[p].numel() {
                let orig = m.params().tensors()[p].data()[j];
                m.params_mut().tensors_mut()[p].data_mut()[j] = orig + H;
                let up = loss_of(&m).0;
                m.params_mut().tensors_mut()[p].data_mut()[j] = orig - H;
                let down = loss_of(&m).0;
                m.params_mut().tensors_mut()[p].data_mut()[j] = orig;
                let numeric = (up - down) / (2.0 * H);
                let analytic = grads[p].as_ref().map_or(0.0, |g| g.data()[j]);
                let scale = analytic.abs().max(numeric.abs());
                let err = if scale < 1e-7 { (analytic - numeric).abs() } else { (analytic - numeric).abs() / scale };
                if err > 1e-4 {
                    return Err(format!(
                        "{family} {}[{j}]: analytic {analytic} numeric {numeric}",
                        m.params().names()[p]
                    ));
                }
            }
        }
    }
    Ok(())
}

fn softmax_normalization() -> Result<(), String> {
    let mut rng = Rng::new(8);
    for _ in 0..50 {
        let n = 2 + rng.below(20);
        let e = 1 + rng.below(80);
        let targets: Vec<usize> = (0..e).map(|_| rng.below(n)).collect();
        let scores = Tensor::uniform(e, 3, -30.0, 30.0, &mut rng);
        let mut tape = Tape::new();
        let s = tape.constant(scores);
        let out = tape.segment_softmax(s, targets.clone().into(), n).map_err(|x| x.to_string())?;
        let w = tape.value(out);
        let mut sums = vec![[0.0; 3]; n];
        for (k, &t) in targets.iter().enumerate() {
            for c in 0..3 {
                sums[t][c] += w.get(k, c);
            }
        }
        for t in targets.iter() {
            for c in 0..3 {
                if (sums[*t][c] - 1.0).abs() > 1e-9 {
                    return Err(format!("destination {t} sums to {}", sums[*t][c]));
                }
            }
        }
    }
    Ok(())
}

fn hyperbolic_round_trips() -> Result<(), String> {
    let mut rng = Rng::new(9);
    for k in [0.5, 1.0, 2.5] {
        for norm in [1e-3, 0.3, 2.0, 5.0] {
            // Tangent vectors at the origin have a zero time coordinate.
            let mut v: Vec<f64> = (0..5).map(|i| if i == 0 { 0.0 } else { rng.uniform_range(-1.0, 1.0) }).collect();
            let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x *= norm / r);
            let p = giv::hyperbolic::exp_map_origin(&v, k).map_err(|e| e.to_string())?;
            let back = giv::hyperbolic::log_map_origin(&p).map_err(|e| e.to_string())?;
            let err = v.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if err > 1e-8 {
                return Err(format!("K={k} |v|={norm}: error {err:e}"));
            }
        }
    }
    Ok(())
}

fn curvature_oracle() -> Result<(), String> {
    for n in 2..=6 {
        for edges in common::curvature::graphs_up_to_iso(n) {
            let g = common::curvature::graph(n, &edges);
            let adj = g.adjacency();
            for alpha in [0.0, 0.5] {
                let k = curvature_per_edge(&g, alpha).map_err(|e| e.to_string())?;
                for (e, (s, t)) in g.edges().pairs().enumerate() {
                    let want = common::curvature::oracle_curvature(&adj, s, t, alpha);
                    if (k[e] - want).abs() > 1e-9 {
                        return Err(format!("{edges:?} alpha {alpha} ({s},{t}): {} vs {want}", k[e]));
                    }
                }
            }
        }
    }
    Ok(())
}

fn curvature_signs() -> Result<(), String> {
    let clique = common::curvature::graph(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
    if curvature_per_edge(&clique, 0.5).map_err(|e| e.to_string())?.iter().any(|&k| k <= 0.0) {
        return Err("4-clique edge not positive".into());
    }
    let bridge = common::curvature::graph(6, &[(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3), (2, 3)]);
    let k = curvature_per_edge(&bridge, 0.5).map_err(|e| e.to_string())?;
    for (e, (s, t)) in bridge.edges().pairs().enumerate() {
        let is_bridge = (s.min(t), s.max(t)) == (2, 3);
        if is_bridge != (k[e] < 0.0) {
            return Err(format!("edge ({s},{t}) curvature {}", k[e]));
        }
    }
    Ok(())
}

fn permutation_multiset() -> Result<(), String> {
    let g = common::curvature::graph(7, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 0), (1, 4)]);
    let info = random_info(&g, 3, 2020).map_err(|e| e.to_string())?;
    let rows = |t: &Tensor| {
        let mut r: Vec<Vec<u64>> = (0..t.rows()).map(|i| t.row(i).iter().map(|v| v.to_bits()).collect()).collect();
        r.sort();
        r
    };
    for seed in [0, 10, 100] {
        let p = permute_info(&info, seed).map_err(|e| e.to_string())?;
        if rows(p.values()) != rows(info.values()) {
            return Err(format!("seed {seed} changed the multiset of rows"));
        }
    }
    Ok(())
}

fn metric_examples() -> Result<(), String> {
    let v = |x: &[f64]| WeightVector { values: x.to_vec(), source: String::new() };
    let c = column_fluctuation(&weights_from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]], None).map_err(|e| e.to_string())?);
    let constant = column_fluctuation(&weights_from_rows(&vec![vec![0.4; 3]; 2], None).map_err(|e| e.to_string())?);
    let same = cosine_similarity(&v(&[0.2, 0.3]), &v(&[0.2, 0.3])).map_err(|e| e.to_string())?;
    let orth = cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).map_err(|e| e.to_string())?;
    let anti = cosine_similarity(&v(&[1.0, 2.0]), &v(&[-1.0, -2.0])).map_err(|e| e.to_string())?;
    let got = [c, constant, same, orth, anti];
    let want = [0.5, 0.0, 1.0, 0.5, 0.0];
    if got != want {
        return Err(format!("got {got:?}, want {want:?}"));
    }
    Ok(())
}

fn forward_oracles() -> Result<(), String> {
    use common::forward::*;
    for family in Family::ALL {
        let mut m = build(family, &small_spec(family));
        scramble(&mut m, 21);
        let want = match family {
            Family::CurvGN | Family::PEGN => oracle_curvgn(&m).0,
            Family::GAT => oracle_gat(&m),
            Family::HGCN => oracle_hgcn(&m),
            Family::AGNN => oracle_agnn(&m),
            Family::GCN => oracle_gcn(&m),
        };
        let err = max_err(&m.logits().map_err(|e| e.to_string())?, &want);
        if err > 1e-8 {
            return Err(format!("{family}: max error {err:e}"));
        }
    }
    Ok(())
}

fn main() {
    // `cargo test` passes harness flags such as `--quiet`; listing must stay silent.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut lab = Lab::new();
    let perm = [(V::Perm(0), "_A"), (V::Perm(10), "_B"), (V::Perm(100), "_C")];
    let criteria: Vec<(&str, Box<dyn FnOnce(&mut Lab) -> Outcome>)> = vec![
        ("1 GCN baseline sanity", Box::new(criterion_1)),
        ("2 GIV parity (permutation)", Box::new(move |l| parity(l, &perm, 1.0, &PARITY))),
        ("3 GIV parity (random values)", Box::new(|l| parity(l, &[(V::Rand(2020), "(Rand)")], 1.0, &PARITY))),
        ("4 weight similarity", Box::new(criterion_4)),
        ("5 column fluctuation magnitude", Box::new(criterion_5)),
        ("6 explicit-GNN contrast", Box::new(criterion_6)),
        ("7 explicit conversion parity", Box::new(criterion_7)),
        ("8 property suites", Box::new(|_| criterion_8())),
        ("9 HGCN desk-scale check", Box::new(criterion_9)),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let out = run(&mut lab);
        if !out.pass {
            failed += 1;
        }
        println!("[{}] {name}: {}", if out.pass { "PASS" } else { "FAIL" }, out.detail);
    }
    println!("acceptance: {} of 9 criteria failed", failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
