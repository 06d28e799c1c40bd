//! Per-edge message weights `tau`, stored dims-by-edges.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;

/// `values` is `m x n`: `m` weight channels over `n` edges in the graph's
/// canonical edge order (sorted non-loop edges, then the self-loop block).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageWeights {
    values: Tensor,
    self_loop_range: Option<Range<usize>>,
}

impl MessageWeights {
    pub fn new(values: Tensor, self_loop_range: Option<Range<usize>>) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(Error::dim("message weights", format!("shape {:?} is not a matrix", values.shape())));
        }
        if let Some(r) = &self_loop_range {
            if r.end > values.cols() || r.start > r.end {
                return Err(Error::dim(
                    "message weights",
                    format!("self-loop range {r:?} outside {} edges", values.cols()),
                ));
            }
        }
        Ok(MessageWeights { values, self_loop_range })
    }

    /// From an edges-by-channels tensor as produced on the tape.
    pub(crate) fn from_edge_major(t: &Tensor, g: &Graph) -> Result<Self> {
        Self::new(t.transpose(), g.self_loop_range())
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    /// Weight channels `m`.
    pub fn dims(&self) -> usize {
        self.values.rows()
    }

    /// Edge count `n`, self-loops included.
    pub fn n_edges(&self) -> usize {
        self.values.cols()
    }

    pub fn self_loop_range(&self) -> Option<Range<usize>> {
        self.self_loop_range.clone()
    }

    pub(crate) fn edge_major(&self) -> Tensor {
        self.values.transpose()
    }

    /// Checks that every value lies in `[0, 1]` and that each channel sums
    /// to one over the incoming edges of every destination.
    pub fn check_simplex(&self, targets: &[usize], n_nodes: usize, tol: f64) -> Result<()> {
        if targets.len() != self.n_edges() {
            return Err(Error::Contract(format!(
                "message weights cover {} edges, graph has {}",
                self.n_edges(),
                targets.len()
            )));
        }
        for c in 0..self.dims() {
            let row = self.values.row(c);
            let mut sums = vec![0.0; n_nodes];
            let mut seen = vec![false; n_nodes];
            for (&t, &v) in targets.iter().zip(row) {
                if !(-tol..=1.0 + tol).contains(&v) {
                    return Err(Error::Contract(format!("weight {v} outside [0, 1] in channel {c}")));
                }
                sums[t] += v;
                seen[t] = true;
            }
            if let Some(node) = (0..n_nodes).find(|&i| seen[i] && (sums[i] - 1.0).abs() > tol) {
                return Err(Error::Contract(format!(
                    "channel {c} sums to {} at node {node}",
                    sums[node]
                )));
            }
        }
        Ok(())
    }

    /// Element-wise mean of equally shaped weights.
    pub fn mean(items: &[MessageWeights]) -> Result<MessageWeights> {
        let first = items.first().ok_or_else(|| Error::Contract("mean of zero weight sets".into()))?;
        let mut acc = vec![0.0; first.values.numel()];
        for w in items {
            if w.values.shape() != first.values.shape() || w.self_loop_range != first.self_loop_range {
                return Err(Error::Contract("averaged weights disagree in shape or edge layout".into()));
            }
            for (a, v) in acc.iter_mut().zip(w.values.data()) {
                *a += v;
            }
        }
        let k = items.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        MessageWeights::new(Tensor::new(first.values.shape().to_vec(), acc)?, first.self_loop_range.clone())
    }
}
