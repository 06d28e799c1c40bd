//! Dataset directories: `nodes.csv`, `edges.csv` and an optional
//! `edge_features.csv`, plus the `prepared/` cache written by `giv prepare`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use giv::graph::{load_graph_with_report, make_split, Graph, GraphSummary, LoadReport, Split};
use giv::info::{load_edge_features, GraphInfo};
use giv::models::ParamStore;
use giv::tensor::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const NODE_FILE: &str = "nodes.csv";
pub const EDGE_FILE: &str = "edges.csv";
pub const EDGE_FEATURE_FILE: &str = "edge_features.csv";
const CACHE_DIR: &str = "prepared";
const GRAPH_BIN: &str = "graph.bin";
const META_JSON: &str = "meta.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Meta {
    /// sha256 of every source file, keyed by file name.
    pub sources: BTreeMap<String, String>,
    pub split_seed: u64,
    pub summary: GraphSummary,
    pub load_report: LoadReport,
    pub split_sizes: (usize, usize, usize),
    pub split_scaled: bool,
    pub node_ids: Vec<String>,
    pub split: Split,
}

pub struct Dataset {
    pub dir: PathBuf,
    pub graph: Graph,
    pub split: Split,
    pub meta: Meta,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn source_hashes(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for name in [NODE_FILE, EDGE_FILE, EDGE_FEATURE_FILE] {
        let path = dir.join(name);
        if !path.exists() {
            if name == EDGE_FEATURE_FILE {
                continue;
            }
            bail!("missing {}", path.display());
        }
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        out.insert(name.to_string(), sha256_hex(&bytes));
    }
    Ok(out)
}

fn read_meta(dir: &Path) -> Option<Meta> {
    let text = fs::read_to_string(dir.join(CACHE_DIR).join(META_JSON)).ok()?;
    serde_json::from_str(&text).ok()
}

pub enum Prepared {
    Fresh(Meta),
    UpToDate(Meta),
}

/// Validates the CSV inputs and writes the cache. A cache whose source
/// hashes and split seed still match is left untouched.
pub fn prepare(dir: &Path, split_seed: u64, force: bool) -> Result<Prepared> {
    let sources = source_hashes(dir)?;
    if !force {
        if let Some(meta) = read_meta(dir) {
            if meta.sources == sources && meta.split_seed == split_seed && dir.join(CACHE_DIR).join(GRAPH_BIN).exists() {
                return Ok(Prepared::UpToDate(meta));
            }
        }
    }
    let (graph, load_report) = load_graph_with_report(dir.join(NODE_FILE), dir.join(EDGE_FILE))?;
    let split = make_split(&graph, split_seed)?;
    split.validate(graph.n_nodes())?;
    if dir.join(EDGE_FEATURE_FILE).exists() {
        load_edge_features(&graph, dir.join(EDGE_FEATURE_FILE))?;
    }

    let mut store = ParamStore::new();
    store.insert("features", graph.features().clone());
    let labels: Vec<f64> = graph.labels().iter().map(|&l| l as f64).collect();
    store.insert("labels", Tensor::matrix(labels.len(), 1, labels)?);
    let mut pairs = Vec::with_capacity(graph.n_edges() * 2);
    for (s, t) in graph.edges().pairs() {
        pairs.push(s as f64);
        pairs.push(t as f64);
    }
    store.insert("edges", Tensor::matrix(graph.n_edges(), 2, pairs)?);

    let meta = Meta {
        sources,
        split_seed,
        summary: graph.summary(),
        load_report,
        split_sizes: split.sizes(),
        split_scaled: split.scaled,
        node_ids: graph.node_ids().to_vec(),
        split,
    };
    let cache = dir.join(CACHE_DIR);
    fs::create_dir_all(&cache)?;
    store.save(cache.join(GRAPH_BIN))?;
    fs::write(cache.join(META_JSON), serde_json::to_vec(&meta)?)?;
    Ok(Prepared::Fresh(meta))
}

/// Loads a prepared dataset, refusing a missing or stale cache.
pub fn load(dir: &Path) -> Result<Dataset> {
    let meta = read_meta(dir)
        .with_context(|| format!("{} is not prepared; run `giv prepare {}`", dir.display(), dir.display()))?;
    if source_hashes(dir)? != meta.sources {
        bail!("cache in {} is stale; run `giv prepare {}` again", dir.display(), dir.display());
    }
    let store = ParamStore::load(dir.join(CACHE_DIR).join(GRAPH_BIN))?;
    let get = |name: &str| store.get(name).with_context(|| format!("cache lacks tensor {name:?}"));
    let features = get("features")?.clone();
    let labels = get("labels")?.data().iter().map(|&l| l as i64).collect();
    let edges = get("edges")?;
    let pairs = (0..edges.rows()).map(|r| (edges.get(r, 0) as usize, edges.get(r, 1) as usize));
    let graph = Graph::from_parts(features, pairs, labels, Some(meta.node_ids.clone()))?;
    let split = meta.split.clone();
    split.validate(graph.n_nodes())?;
    Ok(Dataset { dir: dir.to_path_buf(), graph, split, meta })
}

impl Dataset {
    pub fn edge_features(&self, graph: &Graph) -> Result<Option<GraphInfo>> {
        let path = self.dir.join(EDGE_FEATURE_FILE);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(load_edge_features(graph, path)?))
    }
}
