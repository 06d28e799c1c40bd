//! Full-batch training with Adam, early stopping, repeated seeded runs and
//! multi-run weight averaging.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Split};
use crate::info::GraphInfo;
use crate::models::{Family, MessageWeights, Mode, Model, ModelSpec, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor};

const DROPOUT_STREAM: u64 = 0xD50;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub dropout: f64,
    /// Seed of the first run; run `r` uses `base_seed + r`.
    pub base_seed: u64,
    pub runs: usize,
    pub weight_runs: usize,
}

impl TrainConfig {
    pub fn for_family(family: Family) -> Self {
        let attention = matches!(family, Family::GAT | Family::AGNN);
        TrainConfig {
            learning_rate: if attention { 0.005 } else { 0.01 },
            weight_decay: 5e-4,
            max_epochs: 300,
            patience: 100,
            dropout: if family == Family::GAT { 0.6 } else { 0.5 },
            base_seed: 0,
            runs: 30,
            weight_runs: 50,
        }
    }

    pub fn seeds(&self, n: usize) -> Vec<u64> {
        (0..n as u64).map(|r| self.base_seed.wrapping_add(r)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(format!("train config: {m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {}", self.dropout));
        }
        if self.max_epochs == 0 || self.patience == 0 || self.patience > self.max_epochs {
            return bad(format!("patience {} with {} epochs", self.patience, self.max_epochs));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub test_accuracy: f64,
    pub best_val_accuracy: f64,
    pub best_val_loss: f64,
    pub train_accuracy: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Diagnostic when the run diverged; accuracies are then zero.
    pub failure: Option<String>,
}

impl RunResult {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// Row-wise argmax; the lowest class index wins ties.
pub fn predict(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(pred: &[usize], labels: &[i64], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let hits = rows.iter().filter(|&&r| labels[r] >= 0 && pred[r] == labels[r] as usize).count();
    hits as f64 / rows.len() as f64
}

fn mean_nll(logits: &Tensor, labels: &[i64], rows: &[usize]) -> f64 {
    let mut total = 0.0;
    for &r in rows {
        let row = logits.row(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[labels[r] as usize];
    }
    total / rows.len().max(1) as f64
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Adam { m: zeros.clone(), v: zeros, t: 0 }
    }

    /// One step with L2 regularization folded into the gradient.
    fn step(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>], lr: f64, wd: f64) {
        self.t += 1;
        let (c1, c2) = (1.0 - ADAM_BETA1.powi(self.t), 1.0 - ADAM_BETA2.powi(self.t));
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g.data()[j] + wd * *w;
                m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * gj;
                v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * gj * gj;
                *w -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

struct Masks {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
    train_rows: Arc<[usize]>,
    train_labels: Arc<[usize]>,
}

fn masks(g: &Graph, split: &Split) -> Result<Masks> {
    split.validate(g.n_nodes())?;
    let (train, val, test) = (split.train_indices(), split.val_indices(), split.test_indices());
    let labels = g.labels();
    if let Some(&r) = train.iter().chain(&val).chain(&test).find(|&&r| labels[r] < 0) {
        return Err(Error::Split(format!("node {r} is in the split but unlabeled")));
    }
    if train.is_empty() {
        return Err(Error::Split("empty training mask".into()));
    }
    let train_labels: Vec<usize> = train.iter().map(|&r| labels[r] as usize).collect();
    Ok(Masks { train_rows: train.clone().into(), train_labels: train_labels.into(), train, val, test })
}

/// Trains one model from `spec` with `seed` as its initialization and
/// dropout seed. A diverging run is returned with `failure` set and the
/// parameters of its best epoch so far.
pub fn train_one(
    spec: &ModelSpec,
    g: &Graph,
    info: Option<&GraphInfo>,
    split: &Split,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Model, RunResult)> {
    cfg.validate()?;
    let spec = ModelSpec { init_seed: seed, ..spec.clone() };
    let mut model = Model::build(&spec, g, info)?;
    let masks = masks(model.graph(), split)?;
    let labels = model.graph().labels().to_vec();
    let mut adam = Adam::new(model.params());
    let mut rng = Rng::derive(seed, DROPOUT_STREAM);

    let mut result = RunResult {
        seed,
        test_accuracy: 0.0,
        best_val_accuracy: f64::NEG_INFINITY,
        best_val_loss: f64::INFINITY,
        train_accuracy: 0.0,
        best_epoch: 0,
        epochs_run: 0,
        failure: None,
    };
    let mut best_params = model.params().clone();
    let mut since_best = 0;

    for epoch in 0..cfg.max_epochs {
        result.epochs_run = epoch + 1;
        let step = (|| -> Result<f64> {
            model.begin_epoch(epoch)?;
            let mut tape = Tape::new();
            let vars = model.params().bind(&mut tape);
            let out = model.forward(&mut tape, &vars, &mut Mode::Train { dropout: cfg.dropout, rng: &mut rng })?;
            let logp = tape.log_softmax_rows(out.logits);
            let loss = tape.nll_loss(logp, masks.train_rows.clone(), masks.train_labels.clone())?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::numeric("training loss", format!("{value} at epoch {epoch}")));
            }
            let mut grads = tape.backward(loss)?;
            let grads: Vec<Option<Tensor>> = vars.iter().map(|&v| grads.take(v)).collect();
            adam.step(model.params_mut(), &grads, cfg.learning_rate, cfg.weight_decay);
            Ok(value)
        })();
        let eval = step.and_then(|_| model.logits());
        let logits = match eval {
            Ok(l) if l.is_finite() => l,
            Ok(_) => {
                result.failure = Some(format!("non-finite logits at epoch {epoch}"));
                break;
            }
            Err(Error::Numeric { op, detail }) => {
                result.failure = Some(format!("diverged in {op}: {detail}"));
                break;
            }
            Err(e) => return Err(e),
        };

        let pred = predict(&logits);
        let val_acc = accuracy(&pred, &labels, &masks.val);
        let val_loss = mean_nll(&logits, &labels, &masks.val);
        let better = val_acc > result.best_val_accuracy
            || (val_acc == result.best_val_accuracy && val_loss < result.best_val_loss);
        if better {
            result.best_val_accuracy = val_acc;
            result.best_val_loss = val_loss;
            result.best_epoch = epoch;
            result.test_accuracy = accuracy(&pred, &labels, &masks.test);
            result.train_accuracy = accuracy(&pred, &labels, &masks.train);
            best_params.clone_from(model.params());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    model.params_mut().copy_from(&best_params)?;
    if result.failure.is_some() {
        result.test_accuracy = 0.0;
        result.train_accuracy = 0.0;
    }
    if !result.best_val_accuracy.is_finite() {
        result.best_val_accuracy = 0.0;
    }
    Ok((model, result))
}

/// Sample mean and sample standard deviation (`n - 1` denominator).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mean: f64,
    pub std: f64,
    pub completed: usize,
    pub failed: usize,
    pub runs: Vec<RunResult>,
}

impl RunSummary {
    /// Statistics over the test accuracies of the runs that did not fail.
    pub fn from_runs(runs: Vec<RunResult>) -> Self {
        let acc: Vec<f64> = runs.iter().filter(|r| !r.failed()).map(|r| r.test_accuracy).collect();
        let (mean, std) = mean_std(&acc);
        RunSummary { mean, std, completed: acc.len(), failed: runs.len() - acc.len(), runs }
    }
}

/// `n_runs` independent trainings with seeds `cfg.base_seed ..`; runs
/// execute in parallel and are reported in seed order.
pub fn repeat_runs(
    spec: &ModelSpec,
    g: &Graph,
    info: Option<&GraphInfo>,
    split: &Split,
    cfg: &TrainConfig,
    n_runs: usize,
) -> Result<RunSummary> {
    if n_runs < 2 {
        return Err(Error::Contract(format!("repeat_runs needs at least 2 runs, got {n_runs}")));
    }
    let runs: Result<Vec<RunResult>> = cfg
        .seeds(n_runs)
        .into_par_iter()
        .map(|seed| train_one(spec, g, info, split, cfg, seed).map(|(_, r)| r))
        .collect();
    Ok(RunSummary::from_runs(runs?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AveragedWeights {
    /// One averaged set per graph layer.
    pub layers: Vec<MessageWeights>,
    pub used_runs: usize,
    pub failed_runs: usize,
}

/// Trains `n_runs` models and averages the weights of every graph layer
/// element-wise. Failed runs are left out; all runs failing is an error.
pub fn averaged_weights_all(
    spec: &ModelSpec,
    g: &Graph,
    info: Option<&GraphInfo>,
    split: &Split,
    cfg: &TrainConfig,
    n_runs: usize,
) -> Result<AveragedWeights> {
    if n_runs == 0 {
        return Err(Error::Contract("weight averaging over zero runs".into()));
    }
    let seeds = cfg.seeds(n_runs);
    let mut sums: Option<Vec<Tensor>> = None;
    let mut layout = None;
    let (mut used, mut failed) = (0, 0);
    // Bounded batches keep memory flat; summation stays in seed order.
    let batch = rayon::current_num_threads().max(1) * 2;
    for chunk in seeds.chunks(batch) {
        let got: Result<Vec<Option<Vec<MessageWeights>>>> = chunk
            .par_iter()
            .map(|&seed| {
                let (model, run) = train_one(spec, g, info, split, cfg, seed)?;
                if run.failed() { Ok(None) } else { model.message_weights().map(Some) }
            })
            .collect();
        for weights in got? {
            let Some(weights) = weights else {
                failed += 1;
                continue;
            };
            used += 1;
            let acc = sums.get_or_insert_with(|| {
                layout = Some(weights.iter().map(|w| w.self_loop_range()).collect::<Vec<_>>());
                weights.iter().map(|w| Tensor::zeros(w.dims(), w.n_edges())).collect()
            });
            for (a, w) in acc.iter_mut().zip(&weights) {
                for (x, v) in a.data_mut().iter_mut().zip(w.values().data()) {
                    *x += v;
                }
            }
        }
    }
    let (Some(sums), Some(layout)) = (sums, layout) else {
        return Err(Error::Contract(format!("all {n_runs} weight-averaging runs failed")));
    };
    let layers = sums
        .into_iter()
        .zip(layout)
        .map(|(mut t, range)| {
            t.data_mut().iter_mut().for_each(|x| *x /= used as f64);
            MessageWeights::new(t, range)
        })
        .collect::<Result<_>>()?;
    Ok(AveragedWeights { layers, used_runs: used, failed_runs: failed })
}

/// Averaged weights of one graph layer (1-based index).
pub fn averaged_weights(
    spec: &ModelSpec,
    g: &Graph,
    info: Option<&GraphInfo>,
    split: &Split,
    cfg: &TrainConfig,
    n_runs: usize,
    layer_index: usize,
) -> Result<MessageWeights> {
    let n = spec.tau_layers();
    if layer_index == 0 || layer_index > n {
        return Err(Error::Contract(format!("layer index {layer_index} outside 1..={n}")));
    }
    let mut avg = averaged_weights_all(spec, g, info, split, cfg, n_runs)?;
    Ok(avg.layers.swap_remove(layer_index - 1))
}
