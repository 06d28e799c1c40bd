//! Graph container, CSV ingestion, self-loop bookkeeping and splits.

mod io;
mod split;

pub use io::{load_graph, load_graph_with_report, write_graph, LoadReport};
pub use split::{make_split, Split};

use std::collections::HashSet;
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Directed edge list. Edge `e` carries a message from `sources[e]` to
/// `targets[e]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeIndex {
    sources: Arc<[usize]>,
    targets: Arc<[usize]>,
}

impl EdgeIndex {
    pub fn new(sources: Vec<usize>, targets: Vec<usize>, n_nodes: usize) -> Result<Self> {
        if sources.len() != targets.len() {
            return Err(Error::dim(
                "edge index",
                format!("{} sources vs {} targets", sources.len(), targets.len()),
            ));
        }
        if let Some(&bad) = sources.iter().chain(&targets).find(|&&v| v >= n_nodes) {
            return Err(Error::dim("edge index", format!("node id {bad} >= {n_nodes}")));
        }
        Ok(EdgeIndex { sources: sources.into(), targets: targets.into() })
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn sources(&self) -> &Arc<[usize]> {
        &self.sources
    }

    pub fn targets(&self) -> &Arc<[usize]> {
        &self.targets
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.sources.iter().copied().zip(self.targets.iter().copied())
    }
}

/// Immutable attributed graph. Edges are sorted by `(source, target)`; once
/// self-loops are added they form a contiguous trailing block recorded in
/// `self_loop_range`.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    features: Tensor,
    edges: EdgeIndex,
    labels: Vec<i64>,
    n_classes: usize,
    self_loop_range: Option<Range<usize>>,
    node_ids: Vec<String>,
}

/// Serializable summary used by reports and the `prepare` command.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub n_labeled: usize,
    pub self_loops: bool,
}

impl Graph {
    /// Builds a graph from raw parts. `edges` may be given in any order and
    /// with both directions; they are deduplicated and sorted. Self-loops
    /// are rejected here; use [`add_self_loops`].
    pub fn from_parts(
        features: Tensor,
        edges: impl IntoIterator<Item = (usize, usize)>,
        labels: Vec<i64>,
        node_ids: Option<Vec<String>>,
    ) -> Result<Self> {
        let n_nodes = features.rows();
        if labels.len() != n_nodes {
            return Err(Error::dim("graph", format!("{} labels for {n_nodes} nodes", labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l < -1) {
            return Err(Error::Contract(format!("label {bad} is neither a class id nor -1")));
        }
        let mut pairs: Vec<(usize, usize)> = edges.into_iter().collect();
        if let Some(&(s, t)) = pairs.iter().find(|&&(s, t)| s >= n_nodes || t >= n_nodes) {
            return Err(Error::dim("graph", format!("edge ({s},{t}) outside {n_nodes} nodes")));
        }
        if let Some(&(s, _)) = pairs.iter().find(|&&(s, t)| s == t) {
            return Err(Error::Contract(format!("self-loop on node {s} in raw edge list")));
        }
        pairs.sort_unstable();
        pairs.dedup();
        let (sources, targets) = pairs.into_iter().unzip();
        let n_classes = labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
        let node_ids = node_ids.unwrap_or_else(|| (0..n_nodes).map(|i| i.to_string()).collect());
        if node_ids.len() != n_nodes {
            return Err(Error::dim("graph", "node id count differs from node count"));
        }
        Ok(Graph {
            n_nodes,
            features,
            edges: EdgeIndex::new(sources, targets, n_nodes)?,
            labels,
            n_classes,
            self_loop_range: None,
            node_ids,
        })
    }

    /// Like [`Graph::from_parts`] but adds the reverse of every edge first.
    pub fn undirected(
        features: Tensor,
        edges: impl IntoIterator<Item = (usize, usize)>,
        labels: Vec<i64>,
    ) -> Result<Self> {
        let both: Vec<(usize, usize)> = edges.into_iter().flat_map(|(a, b)| [(a, b), (b, a)]).collect();
        Self::from_parts(features, both, labels, None)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn edges(&self) -> &EdgeIndex {
        &self.edges
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn self_loop_range(&self) -> Option<Range<usize>> {
        self.self_loop_range.clone()
    }

    pub fn has_self_loops(&self) -> bool {
        self.self_loop_range.is_some()
    }

    /// Range of the edges that are not appended self-loops.
    pub fn non_loop_range(&self) -> Range<usize> {
        0..self.self_loop_range.as_ref().map_or(self.n_edges(), |r| r.start)
    }

    /// Out-neighbors of every node, excluding appended self-loops.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for e in self.non_loop_range() {
            adj[self.edges.sources[e]].push(self.edges.targets[e]);
        }
        adj
    }

    /// Whether every edge `(a, b)` has its reverse `(b, a)`.
    pub fn is_symmetric(&self) -> bool {
        let set: HashSet<(usize, usize)> = self.edges.pairs().collect();
        set.iter().all(|&(a, b)| set.contains(&(b, a)))
    }

    /// Copy with each feature row scaled to sum to one (all-zero rows kept).
    pub fn with_row_normalized_features(&self) -> Graph {
        let mut features = self.features.clone();
        let d = features.cols();
        if d > 0 {
            for row in features.data_mut().chunks_mut(d) {
                let s: f64 = row.iter().sum();
                if s != 0.0 {
                    row.iter_mut().for_each(|v| *v /= s);
                }
            }
        }
        Graph { features, ..self.clone() }
    }

    pub fn summary(&self) -> GraphSummary {
        GraphSummary {
            n_nodes: self.n_nodes,
            n_edges: self.n_edges(),
            n_features: self.n_features(),
            n_classes: self.n_classes,
            n_labeled: self.labels.iter().filter(|&&l| l >= 0).count(),
            self_loops: self.has_self_loops(),
        }
    }
}

/// Appends one `(i, i)` edge per node as a trailing block.
pub fn add_self_loops(g: &Graph) -> Result<Graph> {
    if g.has_self_loops() || g.edges.pairs().any(|(s, t)| s == t) {
        return Err(Error::Contract("graph already has self-loops".into()));
    }
    let e = g.n_edges();
    let mut sources = g.edges.sources.to_vec();
    let mut targets = g.edges.targets.to_vec();
    sources.extend(0..g.n_nodes);
    targets.extend(0..g.n_nodes);
    Ok(Graph {
        edges: EdgeIndex::new(sources, targets, g.n_nodes)?,
        self_loop_range: Some(e..e + g.n_nodes),
        ..g.clone()
    })
}

/// In-degree of every node (self-loops included when present).
pub fn degrees(g: &Graph) -> Vec<usize> {
    let mut deg = vec![0; g.n_nodes];
    for &t in g.edges.targets.iter() {
        deg[t] += 1;
    }
    deg
}
