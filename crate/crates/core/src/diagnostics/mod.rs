//! Column fluctuation, vectorized weights, scaled cosine similarity and
//! heatmap export over [`MessageWeights`].

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::models::MessageWeights;
use crate::tensor::Tensor;

/// `C(A) = sum_j sum_i |a_ij - mean_i a_ij| / (m n)`.
pub fn column_fluctuation(a: &MessageWeights) -> f64 {
    let v = a.values();
    let (m, n) = (v.rows(), v.cols());
    if m == 0 || n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for j in 0..n {
        let mean = (0..m).map(|i| v.get(i, j)).sum::<f64>() / m as f64;
        total += (0..m).map(|i| (v.get(i, j) - mean).abs()).sum::<f64>();
    }
    total / (m * n) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub values: Vec<f64>,
    pub source: String,
}

/// Column means: one entry per edge.
pub fn to_vector(a: &MessageWeights, source: impl Into<String>) -> WeightVector {
    let v = a.values();
    let m = v.rows().max(1) as f64;
    let values = (0..v.cols()).map(|j| (0..v.rows()).map(|i| v.get(i, j)).sum::<f64>() / m).collect();
    WeightVector { values, source: source.into() }
}

/// `0.5 * cos(a, b) + 0.5`.
pub fn cosine_similarity(a: &WeightVector, b: &WeightVector) -> Result<f64> {
    if a.values.len() != b.values.len() {
        return Err(Error::dim(
            "cosine similarity",
            format!("{} vs {} entries", a.values.len(), b.values.len()),
        ));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    let na = a.values.iter().map(|x| x * x).sum::<f64>();
    let nb = b.values.iter().map(|x| x * x).sum::<f64>();
    if na == 0.0 || nb == 0.0 {
        let which = if na == 0.0 { &a.source } else { &b.source };
        return Err(Error::numeric("cosine similarity", format!("zero vector from {which:?}")));
    }
    let cos = (dot / (na * nb).sqrt()).clamp(-1.0, 1.0);
    Ok(0.5 * cos + 0.5)
}

/// Writes `block,position,dim,value` rows. Within each block (`edge`, then
/// `self_loop`) an edge of rank `r` among `k` gets position `r / k`, plus 1
/// for the self-loop block, so edges fall in `[0, 1)` and loops in `[1, 2)`.
pub fn export_heatmap(a: &MessageWeights, path: impl AsRef<Path>) -> Result<()> {
    let range = a.self_loop_range().ok_or_else(|| {
        Error::Contract("heatmap export needs the self-loop range of the weights".into())
    })?;
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "block,position,dim,value")?;
    let n = a.n_edges();
    let blocks = [("edge", 0.0, (0..range.start).chain(range.end..n).collect::<Vec<_>>()), ("self_loop", 1.0, range.collect())];
    for (name, offset, cols) in blocks {
        let k = cols.len() as f64;
        for (rank, &j) in cols.iter().enumerate() {
            let pos = offset + rank as f64 / k;
            for d in 0..a.dims() {
                writeln!(out, "{name},{pos},{d},{}", a.values().get(d, j))?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// On-disk form of averaged weights: the values plus the edge list they are
/// aligned to, so two files can be checked for alignment before comparing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub label: String,
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
    pub weights: MessageWeights,
}

impl WeightsFile {
    pub fn new(label: impl Into<String>, g: &Graph, weights: MessageWeights) -> Result<Self> {
        if weights.n_edges() != g.n_edges() {
            return Err(Error::Contract(format!(
                "{} weight columns for {} edges",
                weights.n_edges(),
                g.n_edges()
            )));
        }
        Ok(WeightsFile {
            label: label.into(),
            sources: g.edges().sources().to_vec(),
            targets: g.edges().targets().to_vec(),
            weights,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(out, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::ingest(path, e.to_string()))?;
        let w: WeightsFile = serde_json::from_reader(std::io::BufReader::new(f))?;
        if w.sources.len() != w.weights.n_edges() || w.targets.len() != w.sources.len() {
            return Err(Error::ingest(path, "edge list and weight columns differ in length"));
        }
        Ok(w)
    }

    /// Errors unless both files list the same edges in the same order.
    pub fn check_aligned(&self, other: &WeightsFile) -> Result<()> {
        if self.sources != other.sources || self.targets != other.targets {
            return Err(Error::Contract(format!(
                "edge orders of {:?} and {:?} differ",
                self.label, other.label
            )));
        }
        if self.weights.self_loop_range() != other.weights.self_loop_range() {
            return Err(Error::Contract("self-loop blocks differ".into()));
        }
        Ok(())
    }
}

/// Similarity rounded to 4 decimals for tables.
pub fn format_similarity(x: f64) -> String {
    format!("{x:.4}")
}

/// Scientific notation with 3 significant digits, e.g. `2.60e-4`.
pub fn format_fluctuation(x: f64) -> String {
    format!("{x:.2e}")
}

/// Builds weights from rows of a dims-by-edges matrix (test and tooling helper).
pub fn weights_from_rows(rows: &[Vec<f64>], self_loops: Option<std::ops::Range<usize>>) -> Result<MessageWeights> {
    MessageWeights::new(Tensor::from_rows(rows)?, self_loops)
}
