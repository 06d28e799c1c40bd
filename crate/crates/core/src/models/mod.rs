//! Implicit GNNs written as reweight (an LTS mapping per-edge information to
//! weights `tau`, then a per-destination softmax) followed by weighted
//! aggregation, plus GCN with fixed weights.
//!
//! Every model runs on the graph with a self-loop block appended. A forward
//! pass returns the logits together with the `tau` of every graph layer as
//! an edges-by-channels tensor.

mod params;
mod weights;

pub use params::ParamStore;
pub use weights::MessageWeights;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{add_self_loops, degrees, Graph};
use crate::info::{make_edge_permutation, random_info, EdgePermutation, GraphInfo, RANDOM_INFO_STREAM};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

const INIT_STREAM: u64 = 0x1417;
const ELU_ALPHA: f64 = 1.0;

/// First graph layer; layer indices for weight extraction are 1-based.
pub const HIDDEN_LAYER: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    CurvGN,
    PEGN,
    GAT,
    HGCN,
    AGNN,
    GCN,
}

impl Family {
    pub const ALL: [Family; 6] =
        [Family::CurvGN, Family::PEGN, Family::GAT, Family::HGCN, Family::AGNN, Family::GCN];

    pub fn name(self) -> &'static str {
        match self {
            Family::CurvGN => "CurvGN",
            Family::PEGN => "PEGN",
            Family::GAT => "GAT",
            Family::HGCN => "HGCN",
            Family::AGNN => "AGNN",
            Family::GCN => "GCN",
        }
    }

    /// Whether the LTS input comes from a [`GraphInfo`] rather than from
    /// hidden representations.
    pub fn uses_external_info(self) -> bool {
        matches!(self, Family::CurvGN | Family::PEGN)
    }

    pub fn is_implicit(self) -> bool {
        self != Family::GCN
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Contract(format!("unknown model family {s:?}")))
    }
}

/// What happens to the graph information before the LTS sees it.
#[derive(Clone, Debug, PartialEq)]
pub enum Randomization {
    None,
    /// One fixed permutation of the information rows across edge slots.
    Permuted { seed: u64 },
    /// Uniform(0, 1) substitute, fixed at build unless resampled per epoch.
    Random { seed: u64, resample_per_epoch: bool },
    /// No LTS; one weight set per graph layer.
    Frozen(Vec<MessageWeights>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GcnWeights {
    /// `1 / sqrt(d_i d_j)` with self-loops counted in the degree.
    Normalized,
    /// The normalized list shuffled across edges.
    Permuted { seed: u64 },
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub family: Family,
    /// Hidden width; per head for GAT.
    pub hidden: usize,
    pub heads: usize,
    pub output_heads: usize,
    /// AGNN propagation layers.
    pub propagation_layers: usize,
    /// Width of the MLP inside the LTS (CurvGN, PEGN, HGCN).
    pub lts_hidden: usize,
    /// Information width used when random values replace missing info.
    pub info_dim: usize,
    pub vector_tau_hidden: bool,
    pub vector_tau_output: bool,
    /// Slope applied to GAT scores before the softmax; `None` disables it.
    pub leaky_slope: Option<f64>,
    pub hyperbolic_k: f64,
    pub gcn_weights: GcnWeights,
    pub randomization: Randomization,
    pub init_seed: u64,
}

impl ModelSpec {
    pub fn new(family: Family) -> Self {
        let hidden = match family {
            Family::CurvGN | Family::PEGN | Family::HGCN => 64,
            Family::GAT => 8,
            Family::AGNN | Family::GCN => 16,
        };
        ModelSpec {
            family,
            hidden,
            heads: if family == Family::GAT { 8 } else { 1 },
            output_heads: 1,
            propagation_layers: 2,
            lts_hidden: 64,
            info_dim: if family == Family::PEGN { 50 } else { 1 },
            vector_tau_hidden: family.uses_external_info(),
            vector_tau_output: false,
            leaky_slope: Some(0.2),
            hyperbolic_k: 1.0,
            gcn_weights: GcnWeights::Normalized,
            randomization: Randomization::None,
            init_seed: 0,
        }
    }

    /// Number of graph layers that carry message weights.
    pub fn tau_layers(&self) -> usize {
        match self.family {
            Family::AGNN => self.propagation_layers,
            _ => 2,
        }
    }

    pub fn is_frozen(&self) -> bool {
        matches!(self.randomization, Randomization::Frozen(_))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Contract(format!("{}: {m}", self.family)));
        if self.hidden == 0 || self.lts_hidden == 0 || self.info_dim == 0 {
            return fail("widths must be positive".into());
        }
        if self.family == Family::GAT && (self.heads == 0 || self.output_heads == 0) {
            return fail("GAT needs at least one head per layer".into());
        }
        if self.family == Family::AGNN && self.propagation_layers == 0 {
            return fail("AGNN needs at least one propagation layer".into());
        }
        if !(self.hyperbolic_k > 0.0 && self.hyperbolic_k.is_finite()) {
            return fail(format!("curvature parameter K = {}", self.hyperbolic_k));
        }
        if self.family == Family::GCN && self.randomization != Randomization::None {
            return fail("GCN variants are selected with gcn_weights".into());
        }
        if let Randomization::Frozen(ws) = &self.randomization {
            if ws.len() != self.tau_layers() {
                return fail(format!("{} frozen weight sets for {} layers", ws.len(), self.tau_layers()));
            }
        }
        Ok(())
    }
}

/// Replaces the LTS with fixed weights, one set per graph layer.
pub fn to_explicit(spec: &ModelSpec, frozen: Vec<MessageWeights>) -> Result<ModelSpec> {
    if !spec.family.is_implicit() {
        return Err(Error::Contract("GCN has no LTS to remove".into()));
    }
    if let Some(w) = frozen.iter().find(|w| w.n_edges() != frozen[0].n_edges()) {
        return Err(Error::Contract(format!(
            "frozen weights cover {} and {} edges",
            frozen[0].n_edges(),
            w.n_edges()
        )));
    }
    let out = ModelSpec { randomization: Randomization::Frozen(frozen), ..spec.clone() };
    out.validate()?;
    Ok(out)
}

pub enum Mode<'a> {
    Eval,
    Train { dropout: f64, rng: &'a mut Rng },
}

impl Mode<'_> {
    fn drop(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Mode::Eval => Ok(x),
            Mode::Train { dropout, rng } => tape.dropout(x, *dropout, rng, true),
        }
    }
}

pub struct Forward {
    pub logits: Var,
    /// Edges-by-channels weights of each graph layer, before any attention
    /// dropout.
    pub taus: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    graph: Graph,
    params: ParamStore,
    sources: Arc<[usize]>,
    targets: Arc<[usize]>,
    /// Unrandomized external information (CurvGN, PEGN).
    base_info: Option<Tensor>,
    /// What the LTS actually sees (CurvGN, PEGN).
    info: Option<Tensor>,
    perm: Option<Arc<[usize]>>,
    /// Random substitutes per graph layer and head (hidden-representation families).
    random_e: Vec<Vec<Tensor>>,
    /// Edges-by-channels frozen weights per layer.
    frozen: Vec<Tensor>,
    gcn_w: Option<Tensor>,
}

impl Model {
    /// Builds a model on `g` (self-loops are appended when absent). `info`
    /// is required for CurvGN and PEGN unless the LTS is frozen or fed random
    /// values; it may cover the edges with or without the self-loop block,
    /// missing self-loop rows being zero.
    pub fn build(spec: &ModelSpec, g: &Graph, info: Option<&GraphInfo>) -> Result<Model> {
        spec.validate()?;
        let graph = if g.has_self_loops() { g.clone() } else { add_self_loops(g)? };
        let e = graph.n_edges();
        let n_classes = graph.n_classes();
        if n_classes == 0 {
            return Err(Error::Contract("graph has no labeled classes".into()));
        }

        let base_info = if spec.family.uses_external_info() {
            match info {
                Some(i) if i.n_rows() == e => Some(i.values().clone()),
                Some(i) if !g.has_self_loops() && i.n_rows() == g.n_edges() => {
                    let mut data = i.values().data().to_vec();
                    data.resize(e * i.dim(), 0.0);
                    Some(Tensor::matrix(e, i.dim(), data)?)
                }
                Some(i) => {
                    return Err(Error::dim(
                        "model info",
                        format!("{} information rows for {e} edges", i.n_rows()),
                    ))
                }
                None => None,
            }
        } else {
            None
        };
        let needs_info = spec.family.uses_external_info()
            && matches!(spec.randomization, Randomization::None | Randomization::Permuted { .. });
        if needs_info && base_info.is_none() {
            return Err(Error::Contract(format!("{} needs graph information", spec.family)));
        }
        let info_dim = base_info.as_ref().map_or(spec.info_dim, Tensor::cols);

        let mut frozen = Vec::new();
        if let Randomization::Frozen(ws) = &spec.randomization {
            for (l, w) in ws.iter().enumerate() {
                if w.n_edges() != e {
                    return Err(Error::Contract(format!(
                        "frozen weights for layer {} cover {} edges, graph has {e}",
                        l + 1,
                        w.n_edges()
                    )));
                }
                let want = Self::tau_dims(spec, l, n_classes);
                if w.dims() != want {
                    return Err(Error::Contract(format!(
                        "frozen weights for layer {} have {} channels, expected {want}",
                        l + 1,
                        w.dims()
                    )));
                }
                frozen.push(w.edge_major());
            }
        }

        let mut model = Model {
            spec: spec.clone(),
            sources: graph.edges().sources().clone(),
            targets: graph.edges().targets().clone(),
            params: Self::init_params(spec, graph.n_features(), n_classes, info_dim),
            graph,
            info: base_info.clone(),
            base_info,
            perm: None,
            random_e: Vec::new(),
            frozen,
            gcn_w: None,
        };

        match spec.randomization {
            Randomization::Permuted { seed } => {
                model.set_permutation(make_edge_permutation(e, seed)?)?;
            }
            Randomization::Random { seed, .. } => model.sample_random(seed, info_dim)?,
            _ => {}
        }
        if spec.family == Family::GCN {
            model.gcn_w = Some(model.gcn_weights()?);
        }
        Ok(model)
    }

    /// Channels of `tau` in graph layer `l` (0-based).
    fn tau_dims(spec: &ModelSpec, l: usize, n_classes: usize) -> usize {
        match spec.family {
            Family::CurvGN | Family::PEGN => match (l, spec.vector_tau_hidden, spec.vector_tau_output) {
                (0, true, _) => spec.hidden,
                (1, _, true) => n_classes,
                _ => 1,
            },
            Family::GAT => {
                if l == 0 {
                    spec.heads
                } else {
                    spec.output_heads
                }
            }
            _ => 1,
        }
    }

    fn init_params(spec: &ModelSpec, n_features: usize, n_classes: usize, info_dim: usize) -> ParamStore {
        let mut rng = Rng::derive(spec.init_seed, INIT_STREAM);
        let mut p = ParamStore::new();
        let frozen = spec.is_frozen();
        let h = spec.hidden;
        let mlp = |p: &mut ParamStore, rng: &mut Rng, prefix: &str, d_in: usize, d_out: usize| {
            p.insert(format!("{prefix}.lts.w1"), Tensor::glorot(d_in, spec.lts_hidden, rng));
            p.insert(format!("{prefix}.lts.b1"), Tensor::zeros(1, spec.lts_hidden));
            p.insert(format!("{prefix}.lts.w2"), Tensor::glorot(spec.lts_hidden, d_out, rng));
            p.insert(format!("{prefix}.lts.b2"), Tensor::zeros(1, d_out));
        };
        match spec.family {
            Family::CurvGN | Family::PEGN => {
                for (l, (d_in, d_out)) in [(n_features, h), (h, n_classes)].into_iter().enumerate() {
                    p.insert(format!("l{l}.w"), Tensor::glorot(d_in, d_out, &mut rng));
                    if !frozen {
                        let m = Self::tau_dims(spec, l, n_classes);
                        mlp(&mut p, &mut rng, &format!("l{l}"), info_dim, m);
                    }
                }
            }
            Family::GAT => {
                let layers = [(n_features, spec.heads, h), (spec.heads * h, spec.output_heads, n_classes)];
                for (l, (d_in, heads, f)) in layers.into_iter().enumerate() {
                    p.insert(format!("l{l}.w"), Tensor::glorot(d_in, heads * f, &mut rng));
                    if !frozen {
                        for k in 0..heads {
                            p.insert(format!("l{l}.a{k}"), Tensor::glorot(2 * f, 1, &mut rng));
                        }
                    }
                    let width = if l == 0 { heads * f } else { f };
                    p.insert(format!("l{l}.b"), Tensor::zeros(1, width));
                }
            }
            Family::HGCN => {
                for (l, (d_in, d_out)) in [(n_features, h), (h, n_classes)].into_iter().enumerate() {
                    p.insert(format!("l{l}.w"), Tensor::glorot(d_in, d_out, &mut rng));
                    if !frozen {
                        mlp(&mut p, &mut rng, &format!("l{l}"), 2 * d_out, 1);
                    }
                }
            }
            Family::AGNN => {
                p.insert("fc0.w", Tensor::glorot(n_features, h, &mut rng));
                p.insert("fc0.b", Tensor::zeros(1, h));
                if !frozen {
                    for k in 0..spec.propagation_layers {
                        p.insert(format!("prop{k}.beta"), Tensor::scalar(1.0));
                    }
                }
                p.insert("fc1.w", Tensor::glorot(h, n_classes, &mut rng));
                p.insert("fc1.b", Tensor::zeros(1, n_classes));
            }
            Family::GCN => {
                for (l, (d_in, d_out)) in [(n_features, h), (h, n_classes)].into_iter().enumerate() {
                    p.insert(format!("l{l}.w"), Tensor::glorot(d_in, d_out, &mut rng));
                    p.insert(format!("l{l}.b"), Tensor::zeros(1, d_out));
                }
            }
        }
        p
    }

    fn gcn_weights(&self) -> Result<Tensor> {
        let e = self.graph.n_edges();
        let w = match self.spec.gcn_weights {
            GcnWeights::Ones => vec![1.0; e],
            GcnWeights::Normalized | GcnWeights::Permuted { .. } => {
                let deg = degrees(&self.graph);
                let w: Vec<f64> = self
                    .sources
                    .iter()
                    .zip(self.targets.iter())
                    .map(|(&s, &t)| 1.0 / ((deg[s] * deg[t]) as f64).sqrt())
                    .collect();
                match self.spec.gcn_weights {
                    GcnWeights::Permuted { seed } => {
                        let perm = make_edge_permutation(e, seed)?;
                        perm.as_slice().iter().map(|&p| w[p]).collect()
                    }
                    _ => w,
                }
            }
        };
        Tensor::matrix(e, 1, w)
    }

    /// Replaces the edge permutation of a permutation-mode model.
    pub fn set_permutation(&mut self, perm: EdgePermutation) -> Result<()> {
        if !matches!(self.spec.randomization, Randomization::Permuted { .. }) {
            return Err(Error::Contract("model is not in permutation mode".into()));
        }
        if perm.len() != self.graph.n_edges() {
            return Err(Error::Contract(format!(
                "permutation over {} slots for {} edges",
                perm.len(),
                self.graph.n_edges()
            )));
        }
        if let Some(base) = &self.base_info {
            self.info = Some(perm.apply_rows(base)?);
        }
        self.perm = Some(perm.as_slice().to_vec().into());
        Ok(())
    }

    fn sample_random(&mut self, seed: u64, info_dim: usize) -> Result<()> {
        if self.spec.family.uses_external_info() {
            self.info = Some(random_info(&self.graph, info_dim, seed)?.values().clone());
            return Ok(());
        }
        let e = self.graph.n_edges();
        let n_classes = self.graph.n_classes();
        self.random_e = (0..self.spec.tau_layers())
            .map(|l| {
                let mut rng = Rng::derive(seed, RANDOM_INFO_STREAM + 1 + l as u64);
                let (heads, width) = match self.spec.family {
                    Family::GAT if l == 0 => (self.spec.heads, 2 * self.spec.hidden),
                    Family::GAT => (self.spec.output_heads, 2 * n_classes),
                    Family::HGCN if l == 0 => (1, 2 * self.spec.hidden),
                    Family::HGCN => (1, 2 * n_classes),
                    _ => (1, 1),
                };
                (0..heads).map(|_| Tensor::uniform(e, width, 0.0, 1.0, &mut rng)).collect()
            })
            .collect();
        Ok(())
    }

    /// Per-epoch hook: redraws random information when the spec asks for it.
    pub fn begin_epoch(&mut self, epoch: usize) -> Result<()> {
        if let Randomization::Random { seed, resample_per_epoch: true } = self.spec.randomization {
            if epoch > 0 {
                let dim = self.info.as_ref().map_or(self.spec.info_dim, Tensor::cols);
                let epoch_seed = Rng::derive(seed, epoch as u64).next_u64();
                self.sample_random(epoch_seed, dim)?;
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// The graph the model runs on, self-loops included.
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Information rows the LTS reads (CurvGN and PEGN only).
    pub fn effective_info(&self) -> Option<&Tensor> {
        self.info.as_ref()
    }

    pub fn n_classes(&self) -> usize {
        self.graph.n_classes()
    }

    fn var(&self, vars: &[Var], name: &str) -> Var {
        let i = self.params.names().iter().position(|n| n == name);
        vars[i.unwrap_or_else(|| panic!("parameter {name} missing"))]
    }

    fn gather_src(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.gather_rows(x, self.sources.clone())
    }

    fn gather_dst(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.gather_rows(x, self.targets.clone())
    }

    fn softmax(&self, tape: &mut Tape, scores: Var) -> Result<Var> {
        tape.segment_softmax(scores, self.targets.clone(), self.graph.n_nodes())
    }

    /// `sum_j tau_ij * z_j` over incoming edges; `tau` has one column or as
    /// many columns as `z`.
    fn aggregate(&self, tape: &mut Tape, z: Var, tau: Var) -> Result<Var> {
        let msgs = self.gather_src(tape, z)?;
        let weighted = if tape.value(tau).cols() == 1 { tape.scale_rows(msgs, tau)? } else { tape.mul(msgs, tau)? };
        tape.segment_sum(weighted, self.targets.clone(), self.graph.n_nodes())
    }

    fn frozen_tau(&self, tape: &mut Tape, l: usize) -> Var {
        tape.constant(self.frozen[l].clone())
    }

    /// Applies the randomization operator to hidden-representation
    /// information `e` of layer `l`, head `k`.
    fn randomize(&self, tape: &mut Tape, e: Var, l: usize, k: usize) -> Result<Var> {
        match (&self.spec.randomization, &self.perm) {
            (Randomization::Permuted { .. }, Some(perm)) => tape.gather_rows(e, perm.clone()),
            (Randomization::Random { .. }, _) => Ok(tape.constant(self.random_e[l][k].clone())),
            _ => Ok(e),
        }
    }

    fn mlp_lts(&self, tape: &mut Tape, vars: &[Var], prefix: &str, e: Var) -> Result<Var> {
        let a = tape.matmul(e, self.var(vars, &format!("{prefix}.lts.w1")))?;
        let a = tape.add_row(a, self.var(vars, &format!("{prefix}.lts.b1")))?;
        let a = tape.relu(a);
        let s = tape.matmul(a, self.var(vars, &format!("{prefix}.lts.w2")))?;
        tape.add_row(s, self.var(vars, &format!("{prefix}.lts.b2")))
    }

    /// Records the forward pass. `vars` must come from
    /// `self.params().bind(tape)`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], mode: &mut Mode) -> Result<Forward> {
        if vars.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "{} bound variables for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        let x = tape.constant(self.graph.features().clone());
        match self.spec.family {
            Family::CurvGN | Family::PEGN => self.forward_curvgn(tape, vars, mode, x),
            Family::GAT => self.forward_gat(tape, vars, mode, x),
            Family::HGCN => self.forward_hgcn(tape, vars, mode, x),
            Family::AGNN => self.forward_agnn(tape, vars, mode, x),
            Family::GCN => self.forward_gcn(tape, vars, mode, x),
        }
    }

    fn forward_curvgn(&self, tape: &mut Tape, vars: &[Var], mode: &mut Mode, x: Var) -> Result<Forward> {
        let mut h = x;
        let mut taus = Vec::new();
        for l in 0..2 {
            let inp = mode.drop(tape, h)?;
            let z = tape.matmul(inp, self.var(vars, &format!("l{l}.w")))?;
            let tau = if self.spec.is_frozen() {
                self.frozen_tau(tape, l)
            } else {
                let info = self.info.as_ref().expect("info present for an unfrozen LTS");
                let e = tape.constant(info.clone());
                let s = self.mlp_lts(tape, vars, &format!("l{l}"), e)?;
                self.softmax(tape, s)?
            };
            taus.push(tau);
            let agg = self.aggregate(tape, z, tau)?;
            h = if l == 0 { tape.elu(agg, ELU_ALPHA) } else { agg };
        }
        Ok(Forward { logits: h, taus })
    }

    fn forward_gat(&self, tape: &mut Tape, vars: &[Var], mode: &mut Mode, x: Var) -> Result<Forward> {
        let mut h = x;
        let mut taus = Vec::new();
        let n_classes = self.n_classes();
        for l in 0..2 {
            let (heads, f) = if l == 0 { (self.spec.heads, self.spec.hidden) } else { (self.spec.output_heads, n_classes) };
            let inp = mode.drop(tape, h)?;
            let z = tape.matmul(inp, self.var(vars, &format!("l{l}.w")))?;
            let mut layer_tau = Vec::with_capacity(heads);
            let mut outs = Vec::with_capacity(heads);
            for k in 0..heads {
                let zk = tape.slice_cols(z, k * f, (k + 1) * f)?;
                let tau = if self.spec.is_frozen() {
                    let all = self.frozen_tau(tape, l);
                    tape.slice_cols(all, k, k + 1)?
                } else {
                    // e_ij = (W h_i || W h_j) with i the destination.
                    let (zi, zj) = (self.gather_dst(tape, zk)?, self.gather_src(tape, zk)?);
                    let e = tape.concat_cols(&[zi, zj])?;
                    let e = self.randomize(tape, e, l, k)?;
                    let mut s = tape.matmul(e, self.var(vars, &format!("l{l}.a{k}")))?;
                    if let Some(slope) = self.spec.leaky_slope {
                        s = tape.leaky_relu(s, slope);
                    }
                    self.softmax(tape, s)?
                };
                layer_tau.push(tau);
                let dropped = mode.drop(tape, tau)?;
                outs.push(self.aggregate(tape, zk, dropped)?);
            }
            taus.push(if heads == 1 { layer_tau[0] } else { tape.concat_cols(&layer_tau)? });
            let b = self.var(vars, &format!("l{l}.b"));
            h = if l == 0 {
                let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
                let cat = tape.add_row(cat, b)?;
                tape.elu(cat, ELU_ALPHA)
            } else {
                let mut acc = outs[0];
                for &o in &outs[1..] {
                    acc = tape.add(acc, o)?;
                }
                let mean = tape.scale(acc, 1.0 / heads as f64);
                tape.add_row(mean, b)?
            };
        }
        Ok(Forward { logits: h, taus })
    }

    /// Prepends the zero time coordinate to spatial tangent rows.
    fn to_ambient(&self, tape: &mut Tape, spatial: Var) -> Result<Var> {
        let zeros = tape.constant(Tensor::zeros(self.graph.n_nodes(), 1));
        tape.concat_cols(&[zeros, spatial])
    }

    fn spatial(&self, tape: &mut Tape, ambient: Var) -> Result<Var> {
        let c = tape.value(ambient).cols();
        tape.slice_cols(ambient, 1, c)
    }

    fn forward_hgcn(&self, tape: &mut Tape, vars: &[Var], mode: &mut Mode, x: Var) -> Result<Forward> {
        let k = self.spec.hyperbolic_k;
        // Raw features are read as tangent vectors at the origin.
        let amb = self.to_ambient(tape, x)?;
        let mut h = tape.exp_map_origin(amb, k)?;
        let mut taus = Vec::new();
        for l in 0..2 {
            let u = tape.log_map_origin(h, k)?;
            let u = self.spatial(tape, u)?;
            let u = mode.drop(tape, u)?;
            let v = tape.matmul(u, self.var(vars, &format!("l{l}.w")))?;
            // Hyperbolic linear map exp(W log h), read back in the tangent space.
            let amb = self.to_ambient(tape, v)?;
            let p = tape.exp_map_origin(amb, k)?;
            let t = tape.log_map_origin(p, k)?;
            let t = self.spatial(tape, t)?;
            let tau = if self.spec.is_frozen() {
                self.frozen_tau(tape, l)
            } else {
                let (ti, tj) = (self.gather_dst(tape, t)?, self.gather_src(tape, t)?);
                let e = tape.concat_cols(&[ti, tj])?;
                let e = self.randomize(tape, e, l, 0)?;
                let s = self.mlp_lts(tape, vars, &format!("l{l}"), e)?;
                self.softmax(tape, s)?
            };
            taus.push(tau);
            let agg = self.aggregate(tape, t, tau)?;
            let amb = self.to_ambient(tape, agg)?;
            h = tape.exp_map_origin(amb, k)?;
        }
        let out = tape.log_map_origin(h, k)?;
        Ok(Forward { logits: self.spatial(tape, out)?, taus })
    }

    fn forward_agnn(&self, tape: &mut Tape, vars: &[Var], mode: &mut Mode, x: Var) -> Result<Forward> {
        let inp = mode.drop(tape, x)?;
        let h = tape.matmul(inp, self.var(vars, "fc0.w"))?;
        let h = tape.add_row(h, self.var(vars, "fc0.b"))?;
        let mut h = tape.relu(h);
        let mut taus = Vec::new();
        for p in 0..self.spec.propagation_layers {
            let tau = if self.spec.is_frozen() {
                self.frozen_tau(tape, p)
            } else {
                let hn = tape.normalize_rows(h);
                let (hi, hj) = (self.gather_dst(tape, hn)?, self.gather_src(tape, hn)?);
                let cos = tape.row_dot(hi, hj)?;
                let cos = self.randomize(tape, cos, p, 0)?;
                let s = tape.mul_scalar(self.var(vars, &format!("prop{p}.beta")), cos)?;
                self.softmax(tape, s)?
            };
            taus.push(tau);
            h = self.aggregate(tape, h, tau)?;
        }
        let inp = mode.drop(tape, h)?;
        let out = tape.matmul(inp, self.var(vars, "fc1.w"))?;
        Ok(Forward { logits: tape.add_row(out, self.var(vars, "fc1.b"))?, taus })
    }

    fn forward_gcn(&self, tape: &mut Tape, vars: &[Var], mode: &mut Mode, x: Var) -> Result<Forward> {
        let w = tape.constant(self.gcn_w.clone().expect("GCN weights built"));
        let mut h = x;
        for l in 0..2 {
            let inp = mode.drop(tape, h)?;
            let z = tape.matmul(inp, self.var(vars, &format!("l{l}.w")))?;
            let agg = self.aggregate(tape, z, w)?;
            let agg = tape.add_row(agg, self.var(vars, &format!("l{l}.b")))?;
            h = if l == 0 { tape.relu(agg) } else { agg };
        }
        Ok(Forward { logits: h, taus: vec![w, w] })
    }

    /// Evaluation-mode logits.
    pub fn logits(&self) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let out = self.forward(&mut tape, &vars, &mut Mode::Eval)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Evaluation-mode weights of every graph layer.
    pub fn message_weights(&self) -> Result<Vec<MessageWeights>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let out = self.forward(&mut tape, &vars, &mut Mode::Eval)?;
        out.taus.iter().map(|&t| MessageWeights::from_edge_major(tape.value(t), &self.graph)).collect()
    }
}

/// Weights of graph layer `layer_index` (1-based; [`HIDDEN_LAYER`] is the
/// first) from an evaluation-mode forward pass.
pub fn extract_message_weights(model: &Model, layer_index: usize) -> Result<MessageWeights> {
    let n = model.spec.tau_layers();
    if layer_index == 0 || layer_index > n {
        return Err(Error::Contract(format!("layer index {layer_index} outside 1..={n}")));
    }
    Ok(model.message_weights()?.swap_remove(layer_index - 1))
}
