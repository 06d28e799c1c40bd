//! Central finite-difference checks for every tape operation, plus the
//! segment-op properties.

use std::sync::Arc;

use proptest::prelude::*;

use super::{Tape, Tensor, Var};
use crate::error::Result;
use crate::rng::Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Random entries bounded away from zero so kinks of relu-like ops are not
/// straddled by the difference stencil.
fn away_from_zero(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.uniform_range(0.1, 1.5);
            if rng.uniform() < 0.5 { -m } else { m }
        })
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn positive(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    Tensor::uniform(rows, cols, 0.2, 2.0, rng)
}

/// Reduces `out` against fixed random weights so every output element
/// receives a distinct upstream gradient.
fn scalarize(tape: &mut Tape, out: Var) -> Var {
    let v = tape.value(out);
    let (r, c) = (v.rows(), v.cols());
    let w = Tensor::uniform(r, c, -1.0, 1.0, &mut Rng::new(0xFD));
    let w = tape.constant(w);
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod)
}

fn eval<F>(build: &F, inputs: &[Tensor]) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars).unwrap();
    let loss = scalarize(&mut tape, out);
    tape.value(loss).data()[0]
}

fn check<F>(name: &str, inputs: Vec<Tensor>, build: F)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars).unwrap();
    let loss = scalarize(&mut tape, out);
    let grads = tape.backward(loss).unwrap();

    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(|g| g.data().to_vec()).unwrap_or(vec![0.0; inputs[i].numel()]);
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= H;
            let numeric = (eval(&build, &plus) - eval(&build, &minus)) / (2.0 * H);
            let a = analytic[j];
            let scale = a.abs().max(numeric.abs());
            let err = if scale < 1e-7 { (a - numeric).abs() } else { (a - numeric).abs() / scale };
            assert!(err <= TOL, "{name}: input {i} elem {j}: analytic {a} numeric {numeric} (rel {err:e})");
        }
    }
}

#[test]
fn matmul_add_mul() {
    let mut rng = Rng::new(1);
    check("matmul", vec![away_from_zero(3, 4, &mut rng), away_from_zero(4, 2, &mut rng)], |t, v| t.matmul(v[0], v[1]));
    check("add", vec![away_from_zero(2, 3, &mut rng), away_from_zero(2, 3, &mut rng)], |t, v| t.add(v[0], v[1]));
    check("mul", vec![away_from_zero(2, 3, &mut rng), away_from_zero(2, 3, &mut rng)], |t, v| t.mul(v[0], v[1]));
    check("add_row", vec![away_from_zero(3, 2, &mut rng), away_from_zero(1, 2, &mut rng)], |t, v| t.add_row(v[0], v[1]));
}

#[test]
fn scalings() {
    let mut rng = Rng::new(2);
    check("scale_rows", vec![away_from_zero(3, 2, &mut rng), away_from_zero(3, 1, &mut rng)], |t, v| {
        t.scale_rows(v[0], v[1])
    });
    check("mul_scalar", vec![away_from_zero(1, 1, &mut rng), away_from_zero(2, 3, &mut rng)], |t, v| {
        t.mul_scalar(v[0], v[1])
    });
    check("scale", vec![away_from_zero(2, 2, &mut rng)], |t, v| Ok(t.scale(v[0], -1.7)));
}

#[test]
fn elementwise() {
    let mut rng = Rng::new(3);
    let x = away_from_zero(3, 3, &mut rng);
    check("relu", vec![x.clone()], |t, v| Ok(t.relu(v[0])));
    check("elu", vec![x.clone()], |t, v| Ok(t.elu(v[0], 1.0)));
    check("leaky_relu", vec![x.clone()], |t, v| Ok(t.leaky_relu(v[0], 0.2)));
    check("exp", vec![x.clone()], |t, v| Ok(t.exp(v[0])));
    check("log", vec![positive(3, 3, &mut rng)], |t, v| t.log(v[0]));
    check("sum", vec![x], |t, v| Ok(t.sum(v[0])));
}

#[test]
fn structural() {
    let mut rng = Rng::new(4);
    let (a, b) = (away_from_zero(2, 3, &mut rng), away_from_zero(2, 1, &mut rng));
    check("concat_cols", vec![a.clone(), b], |t, v| t.concat_cols(&[v[0], v[1]]));
    let c = away_from_zero(1, 3, &mut rng);
    check("concat_rows", vec![a.clone(), c], |t, v| t.concat_rows(&[v[0], v[1]]));
    check("slice_cols", vec![a.clone()], |t, v| t.slice_cols(v[0], 1, 3));
    let idx: Arc<[usize]> = vec![1, 0, 1, 1].into();
    check("gather_rows", vec![a], move |t, v| t.gather_rows(v[0], idx.clone()));
}

#[test]
fn segment_ops() {
    let mut rng = Rng::new(5);
    let targets: Arc<[usize]> = vec![0, 0, 2, 1, 2, 2].into();
    let tg = targets.clone();
    check("segment_sum", vec![away_from_zero(6, 2, &mut rng)], move |t, v| t.segment_sum(v[0], tg.clone(), 4));
    check("segment_softmax", vec![away_from_zero(6, 2, &mut rng)], move |t, v| {
        t.segment_softmax(v[0], targets.clone(), 4)
    });
}

#[test]
fn losses_and_dropout() {
    let mut rng = Rng::new(6);
    let x = away_from_zero(4, 3, &mut rng);
    check("dropout", vec![x.clone()], |t, v| t.dropout(v[0], 0.4, &mut Rng::new(11), true));
    check("log_softmax_rows", vec![x.clone()], |t, v| Ok(t.log_softmax_rows(v[0])));
    let rows: Arc<[usize]> = vec![0, 2, 3].into();
    let labels: Arc<[usize]> = vec![2, 0, 1].into();
    check("nll_loss", vec![x], move |t, v| {
        let lp = t.log_softmax_rows(v[0]);
        t.nll_loss(lp, rows.clone(), labels.clone())
    });
}

#[test]
fn row_ops() {
    let mut rng = Rng::new(7);
    let (a, b) = (away_from_zero(3, 4, &mut rng), away_from_zero(3, 4, &mut rng));
    check("row_dot", vec![a.clone(), b], |t, v| t.row_dot(v[0], v[1]));
    check("normalize_rows", vec![a], |t, v| Ok(t.normalize_rows(v[0])));
}

#[test]
fn hyperbolic_maps() {
    let mut rng = Rng::new(8);
    for k in [0.5, 1.0, 2.5] {
        for scale in [1e-3, 0.3, 2.0] {
            // Column 0 is the time coordinate and is ignored on input.
            let mut x = Tensor::uniform(3, 4, -1.0, 1.0, &mut rng);
            for r in 0..3 {
                let row = &mut x.data_mut()[r * 4..(r + 1) * 4];
                row[0] = 0.0;
                let n = row[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
                row[1..].iter_mut().for_each(|v| *v *= scale / n);
            }
            check("exp_map_origin", vec![x.clone()], move |t, v| t.exp_map_origin(v[0], k));
            check("log_map_origin", vec![x], move |t, v| t.log_map_origin(v[0], k));
        }
    }
}

fn loop_segment_sum(msgs: &[Vec<f64>], targets: &[usize], n: usize) -> Vec<Vec<f64>> {
    let d = msgs.first().map_or(0, |m| m.len());
    let mut out = vec![vec![0.0; d]; n];
    for node in 0..n {
        for (m, &t) in msgs.iter().zip(targets) {
            if t == node {
                for c in 0..d {
                    out[node][c] += m[c];
                }
            }
        }
    }
    out
}

fn edge_case() -> impl Strategy<Value = (usize, Vec<usize>, Vec<Vec<f64>>, u64)> {
    (1usize..8, 1usize..4).prop_flat_map(|(n, d)| {
        (1usize..20).prop_flat_map(move |e| {
            (
                Just(n),
                prop::collection::vec(0..n, e),
                prop::collection::vec(prop::collection::vec(-50.0f64..50.0, d), e),
                any::<u64>(),
            )
        })
    })
}

proptest! {
    #[test]
    fn softmax_sums_to_one_per_destination((n, targets, scores, _seed) in edge_case()) {
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::from_rows(&scores).unwrap());
        let out = tape.segment_softmax(s, targets.clone().into(), n).unwrap();
        let ov = tape.value(out);
        let d = ov.cols();
        let mut sums = vec![0.0; n * d];
        for (e, &t) in targets.iter().enumerate() {
            for c in 0..d {
                let w = ov.get(e, c);
                prop_assert!((0.0..=1.0).contains(&w));
                sums[t * d + c] += w;
            }
        }
        for node in targets.iter().copied() {
            for c in 0..d {
                prop_assert!((sums[node * d + c] - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn segment_sum_is_permutation_invariant((n, targets, msgs, seed) in edge_case()) {
        let mut order: Vec<usize> = (0..targets.len()).collect();
        Rng::new(seed).shuffle(&mut order);
        let shuffled_t: Vec<usize> = order.iter().map(|&i| targets[i]).collect();
        let shuffled_m: Vec<Vec<f64>> = order.iter().map(|&i| msgs[i].clone()).collect();

        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&msgs).unwrap());
        let b = tape.constant(Tensor::from_rows(&shuffled_m).unwrap());
        let ya = tape.segment_sum(a, targets.clone().into(), n).unwrap();
        let yb = tape.segment_sum(b, shuffled_t.into(), n).unwrap();
        let oracle = loop_segment_sum(&msgs, &targets, n);
        let d = tape.value(ya).cols();
        for r in 0..n {
            for c in 0..d {
                prop_assert!((tape.value(ya).get(r, c) - tape.value(yb).get(r, c)).abs() <= 1e-12);
                prop_assert!((tape.value(ya).get(r, c) - oracle[r][c]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn same_seed_same_dropout_and_init(seed in any::<u64>()) {
        let a = Tensor::glorot(5, 4, &mut Rng::new(seed));
        let b = Tensor::glorot(5, 4, &mut Rng::new(seed));
        prop_assert_eq!(a.data(), b.data());
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(4, 4, 1.0));
        let d1 = tape.dropout(x, 0.5, &mut Rng::new(seed), true).unwrap();
        let d2 = tape.dropout(x, 0.5, &mut Rng::new(seed), true).unwrap();
        prop_assert_eq!(tape.value(d1).data(), tape.value(d2).data());
    }
}
