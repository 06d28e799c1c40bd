//! CSV ingestion.
//!
//! Node file rows are `id,label,f1,...,fF`; edge file rows are `src,dst`
//! referring to node ids. A header row is optional and is recognised by a
//! non-numeric first cell. Edges are treated as undirected, re-indexed to
//! dense ids in node-file order and sorted by `(source, target)`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub node_rows: usize,
    pub edge_rows: usize,
    pub duplicate_edges: usize,
    pub dropped_self_loops: usize,
    pub unlabeled_nodes: usize,
}

fn is_header(record: &csv::StringRecord) -> bool {
    record.get(0).is_some_and(|c| c.trim().parse::<f64>().is_err())
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::ingest(path, e.to_string()))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn records(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut rows = Vec::new();
    for (i, rec) in reader(path)?.records().enumerate() {
        let rec = rec.map_err(|e| Error::ingest(path, format!("row {}: {e}", i + 1)))?;
        if i == 0 && is_header(&rec) {
            continue;
        }
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        rows.push(rec);
    }
    Ok(rows)
}

pub fn load_graph(node_file: impl AsRef<Path>, edge_file: impl AsRef<Path>) -> Result<Graph> {
    load_graph_with_report(node_file, edge_file).map(|(g, _)| g)
}

pub fn load_graph_with_report(
    node_file: impl AsRef<Path>,
    edge_file: impl AsRef<Path>,
) -> Result<(Graph, LoadReport)> {
    let (node_path, edge_path) = (node_file.as_ref(), edge_file.as_ref());
    let node_rows = records(node_path)?;
    let mut report = LoadReport { node_rows: node_rows.len(), ..Default::default() };

    let width = node_rows.first().map_or(2, |r| r.len());
    if width < 2 {
        return Err(Error::ingest(node_path, "node rows need at least id and label"));
    }
    let n_features = width - 2;
    let mut index: HashMap<String, usize> = HashMap::with_capacity(node_rows.len());
    let mut ids = Vec::with_capacity(node_rows.len());
    let mut labels = Vec::with_capacity(node_rows.len());
    let mut features = Vec::with_capacity(node_rows.len() * n_features);
    for (i, rec) in node_rows.iter().enumerate() {
        let line = i + 1;
        if rec.len() != width {
            return Err(Error::ingest(
                node_path,
                format!("ragged row {line}: {} columns, expected {width}", rec.len()),
            ));
        }
        let id = rec[0].to_string();
        if index.insert(id.clone(), i).is_some() {
            return Err(Error::ingest(node_path, format!("duplicate node id {id:?} at row {line}")));
        }
        let label: i64 = rec[1]
            .parse()
            .map_err(|_| Error::ingest(node_path, format!("bad label {:?} at row {line}", &rec[1])))?;
        if label < -1 {
            return Err(Error::ingest(node_path, format!("label {label} at row {line}")));
        }
        if label == -1 {
            report.unlabeled_nodes += 1;
        }
        for cell in rec.iter().skip(2) {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::ingest(node_path, format!("bad feature {cell:?} at row {line}")))?;
            features.push(v);
        }
        ids.push(id);
        labels.push(label);
    }

    let edge_rows = records(edge_path)?;
    report.edge_rows = edge_rows.len();
    let mut pairs = Vec::with_capacity(edge_rows.len() * 2);
    for (i, rec) in edge_rows.iter().enumerate() {
        let line = i + 1;
        if rec.len() != 2 {
            return Err(Error::ingest(edge_path, format!("row {line} needs exactly src,dst")));
        }
        let lookup = |key: &str| {
            index.get(key).copied().ok_or_else(|| {
                Error::ingest(edge_path, format!("dangling endpoint {key:?} at row {line}"))
            })
        };
        let (s, t) = (lookup(&rec[0])?, lookup(&rec[1])?);
        if s == t {
            report.dropped_self_loops += 1;
            continue;
        }
        pairs.push((s, t));
        pairs.push((t, s));
    }
    let before = pairs.len();
    pairs.sort_unstable();
    pairs.dedup();
    report.duplicate_edges = (before - pairs.len()) / 2;

    let n = ids.len();
    let features = Tensor::matrix(n, n_features, features)?;
    let graph = Graph::from_parts(features, pairs, labels, Some(ids))?;
    Ok((graph, report))
}

/// Writes a graph in the format [`load_graph`] reads. Appended self-loops
/// are not written. Values use the shortest round-trip decimal form.
pub fn write_graph(g: &Graph, node_file: impl AsRef<Path>, edge_file: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(node_file)?);
    write!(out, "id,label")?;
    for f in 1..=g.n_features() {
        write!(out, ",f{f}")?;
    }
    writeln!(out)?;
    for i in 0..g.n_nodes() {
        write!(out, "{},{}", g.node_ids()[i], g.labels()[i])?;
        for v in g.features().row(i) {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;

    let mut out = BufWriter::new(File::create(edge_file)?);
    writeln!(out, "src,dst")?;
    for e in g.non_loop_range() {
        let (s, t) = (g.edges().sources()[e], g.edges().targets()[e]);
        writeln!(out, "{},{}", g.node_ids()[s], g.node_ids()[t])?;
    }
    out.flush()?;
    Ok(())
}
