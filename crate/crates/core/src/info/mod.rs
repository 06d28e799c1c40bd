//! Per-edge graph information `e_ij` and the two randomization operators.
//!
//! Every provider returns a [`GraphInfo`] with one row per edge of the graph
//! it was built for, self-loops included, plus a provenance record naming
//! each operator (and seed) that produced or wrapped it.

mod curvature;
mod transport;

pub use curvature::{curvature_per_edge, DEFAULT_ALPHA};
pub use transport::earth_movers_distance;

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Stream ids separating the operators that share a user-facing seed.
pub(crate) const PERMUTATION_STREAM: u64 = 0x9E41;
pub(crate) const RANDOM_INFO_STREAM: u64 = 0x7A2D;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Curvature { alpha: f64 },
    PersistenceFile { path: String },
    Random { seed: u64 },
    Permuted { inner: Box<Provenance>, seed: u64 },
    /// Built inside a model from hidden representations.
    Hidden,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphInfo {
    values: Tensor,
    provenance: Provenance,
}

impl GraphInfo {
    pub fn new(g: &Graph, values: Tensor, provenance: Provenance) -> Result<Self> {
        if values.rows() != g.n_edges() {
            return Err(Error::dim(
                "graph info",
                format!("{} rows for a graph with {} edges", values.rows(), g.n_edges()),
            ));
        }
        Ok(GraphInfo { values, provenance })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn n_rows(&self) -> usize {
        self.values.rows()
    }
}

/// A bijection over edge slots: slot `k` receives the row at `perm[k]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgePermutation {
    perm: Vec<usize>,
    seed: u64,
}

impl EdgePermutation {
    pub fn identity(n: usize) -> Self {
        EdgePermutation { perm: (0..n).collect(), seed: 0 }
    }

    pub fn from_vec(perm: Vec<usize>, seed: u64) -> Result<Self> {
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        if sorted.iter().enumerate().any(|(i, &p)| i != p) {
            return Err(Error::Contract("edge permutation is not a bijection".into()));
        }
        Ok(EdgePermutation { perm, seed })
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.perm
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn inverse(&self) -> EdgePermutation {
        let mut inv = vec![0; self.perm.len()];
        for (k, &p) in self.perm.iter().enumerate() {
            inv[p] = k;
        }
        EdgePermutation { perm: inv, seed: self.seed }
    }

    /// `self` applied after `first`: slot `k` receives `first[self[k]]`.
    pub fn compose(&self, first: &EdgePermutation) -> EdgePermutation {
        let perm = self.perm.iter().map(|&p| first.perm[p]).collect();
        EdgePermutation { perm, seed: self.seed }
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &p)| i == p)
    }

    pub fn apply_rows(&self, t: &Tensor) -> Result<Tensor> {
        if t.rows() != self.perm.len() {
            return Err(Error::dim(
                "permute rows",
                format!("{} rows for a permutation of {}", t.rows(), self.perm.len()),
            ));
        }
        let mut data = Vec::with_capacity(t.numel());
        for &p in &self.perm {
            data.extend_from_slice(t.row(p));
        }
        Tensor::new(t.shape().to_vec(), data)
    }
}

/// Fisher-Yates shuffle of `0..n_edges` under `seed`.
pub fn make_edge_permutation(n_edges: usize, seed: u64) -> Result<EdgePermutation> {
    if n_edges == 0 {
        return Err(Error::Contract("edge permutation over zero edges".into()));
    }
    let mut perm: Vec<usize> = (0..n_edges).collect();
    Rng::derive(seed, PERMUTATION_STREAM).shuffle(&mut perm);
    Ok(EdgePermutation { perm, seed })
}

/// Ollivier-Ricci curvature as a one-column information tensor.
pub fn ollivier_ricci(g: &Graph, alpha: f64) -> Result<GraphInfo> {
    let k = curvature_per_edge(g, alpha)?;
    let values = Tensor::matrix(k.len(), 1, k)?;
    GraphInfo::new(g, values, Provenance::Curvature { alpha })
}

/// i.i.d. `Uniform(0, 1)` information, sampled once.
pub fn random_info(g: &Graph, dim: usize, seed: u64) -> Result<GraphInfo> {
    if dim == 0 {
        return Err(Error::Contract("random information needs dim >= 1".into()));
    }
    let mut rng = Rng::derive(seed, RANDOM_INFO_STREAM);
    let values = Tensor::uniform(g.n_edges(), dim, 0.0, 1.0, &mut rng);
    GraphInfo::new(g, values, Provenance::Random { seed })
}

/// Reorders information rows across edge slots without changing any value.
pub fn permute_info(info: &GraphInfo, seed: u64) -> Result<GraphInfo> {
    if info.n_rows() == 0 {
        return Ok(info.clone());
    }
    let perm = make_edge_permutation(info.n_rows(), seed)?;
    Ok(GraphInfo {
        values: perm.apply_rows(&info.values)?,
        provenance: Provenance::Permuted { inner: Box::new(info.provenance.clone()), seed },
    })
}

/// Reads an edge-feature CSV (`src,dst,v1..vD`, node ids as in the node
/// file). Every non-loop edge must be covered, either by its own row or by
/// the row of its reverse; self-loop rows are zero-filled.
pub fn load_edge_features(g: &Graph, path: impl AsRef<Path>) -> Result<GraphInfo> {
    let path = path.as_ref();
    let index: HashMap<&str, usize> =
        g.node_ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let edge_set: BTreeSet<(usize, usize)> = g.edges().pairs().filter(|(s, t)| s != t).collect();

    let file = File::open(path).map_err(|e| Error::ingest(path, e.to_string()))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
    let mut dim = None;
    for (i, rec) in reader.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| Error::ingest(path, format!("row {line}: {e}")))?;
        if i == 0 && rec.get(0).is_some_and(|c| c.parse::<f64>().is_err() && !index.contains_key(c)) {
            continue;
        }
        if rec.len() < 3 {
            return Err(Error::ingest(path, format!("row {line} needs src,dst and at least one value")));
        }
        let d = rec.len() - 2;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::ingest(
                    path,
                    format!("row {line} has {d} values, expected {expected}"),
                ))
            }
            _ => {}
        }
        let lookup = |key: &str| {
            index
                .get(key)
                .copied()
                .ok_or_else(|| Error::ingest(path, format!("unknown node {key:?} at row {line}")))
        };
        let key = (lookup(&rec[0])?, lookup(&rec[1])?);
        if !edge_set.contains(&key) {
            return Err(Error::ingest(
                path,
                format!("row {line}: ({}, {}) is not an edge of the graph", &rec[0], &rec[1]),
            ));
        }
        let values = rec
            .iter()
            .skip(2)
            .map(|c| c.parse::<f64>().map_err(|_| Error::ingest(path, format!("bad value {c:?} at row {line}"))))
            .collect::<Result<Vec<f64>>>()?;
        if rows.insert(key, values).is_some() {
            return Err(Error::ingest(path, format!("duplicate row for ({}, {})", &rec[0], &rec[1])));
        }
    }
    let dim = dim.ok_or_else(|| Error::ingest(path, "no edge rows"))?;

    let mut data = Vec::with_capacity(g.n_edges() * dim);
    let mut missing = Vec::new();
    for (s, t) in g.edges().pairs() {
        if s == t {
            data.extend(std::iter::repeat_n(0.0, dim));
            continue;
        }
        match rows.get(&(s, t)).or_else(|| rows.get(&(t, s))) {
            Some(v) => data.extend_from_slice(v),
            None => missing.push(format!("({},{})", g.node_ids()[s], g.node_ids()[t])),
        }
    }
    if !missing.is_empty() {
        let shown: Vec<_> = missing.iter().take(20).cloned().collect();
        return Err(Error::ingest(
            path,
            format!("{} edges have no row: {}{}", missing.len(), shown.join(" "), if missing.len() > 20 { " ..." } else { "" }),
        ));
    }
    let values = Tensor::matrix(g.n_edges(), dim, data)?;
    GraphInfo::new(g, values, Provenance::PersistenceFile { path: path.display().to_string() })
}

/// Writes non-loop rows of `info` in the edge-feature CSV format.
pub fn write_edge_features(g: &Graph, info: &GraphInfo, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "src,dst")?;
    for d in 1..=info.dim() {
        write!(out, ",v{d}")?;
    }
    writeln!(out)?;
    for e in g.non_loop_range() {
        let (s, t) = (g.edges().sources()[e], g.edges().targets()[e]);
        write!(out, "{},{}", g.node_ids()[s], g.node_ids()[t])?;
        for v in info.values().row(e) {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}
