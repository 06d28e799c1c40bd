//! Executes a resolved matrix: weight averaging first (explicit cells need
//! it), then accuracy runs, then a single-threaded reduce into the report.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use giv::diagnostics::{column_fluctuation, cosine_similarity, export_heatmap, to_vector, WeightsFile};
use giv::graph::Graph;
use giv::info::{ollivier_ricci, GraphInfo};
use giv::models::{to_explicit, Family};
use giv::trainer::{averaged_weights_all, repeat_runs, AveragedWeights};
use rayon::prelude::*;

use crate::dataset::{self, sha256_hex, Dataset};
use crate::matrix::{CellConfig, CellGroup, Matrix, Overrides, Variant};
use crate::report::{finish_groups, CellReport, DatasetEntry, LayerMetrics, Report, RunRow, WeightMetrics, SPLIT_POLICY};

/// Graph and information a cell trains on.
struct Inputs {
    graph: Arc<Graph>,
    info: Option<Arc<GraphInfo>>,
}

struct Prepared {
    datasets: BTreeMap<String, Dataset>,
    graphs: BTreeMap<(String, bool), Arc<Graph>>,
    curvature: BTreeMap<(String, u64), Arc<GraphInfo>>,
    features: BTreeMap<(String, bool), Option<Arc<GraphInfo>>>,
}

impl Prepared {
    fn inputs(&self, cell: &CellConfig) -> Result<Inputs> {
        let key = (cell.dataset.clone(), cell.normalize_features);
        let graph = self.graphs[&key].clone();
        let info = match cell.family {
            Family::CurvGN => Some(self.curvature[&(cell.dataset.clone(), cell.curvature_alpha.to_bits())].clone()),
            Family::PEGN => match &self.features[&key] {
                Some(i) => Some(i.clone()),
                None if cell.variant.random_seed().is_some() => None,
                None => {
                    return Err(anyhow!(
                        "PEGN needs {} in the dataset directory of {:?}",
                        dataset::EDGE_FEATURE_FILE,
                        cell.dataset
                    ))
                }
            },
            _ => None,
        };
        Ok(Inputs { graph, info })
    }
}

fn prepare_inputs(matrix: &Matrix, base_dir: &Path, cells: &[CellConfig]) -> Result<Prepared> {
    let mut p = Prepared {
        datasets: BTreeMap::new(),
        graphs: BTreeMap::new(),
        curvature: BTreeMap::new(),
        features: BTreeMap::new(),
    };
    for cell in cells {
        if !p.datasets.contains_key(&cell.dataset) {
            let dir = base_dir.join(&matrix.datasets[&cell.dataset]);
            let ds = dataset::load(&dir).with_context(|| format!("dataset {:?}", cell.dataset))?;
            p.datasets.insert(cell.dataset.clone(), ds);
        }
        let ds = &p.datasets[&cell.dataset];
        let key = (cell.dataset.clone(), cell.normalize_features);
        if !p.graphs.contains_key(&key) {
            let g = if cell.normalize_features { ds.graph.with_row_normalized_features() } else { ds.graph.clone() };
            p.graphs.insert(key.clone(), Arc::new(g));
        }
        let g = p.graphs[&key].clone();
        if cell.family == Family::CurvGN {
            if let Entry::Vacant(slot) = p.curvature.entry((cell.dataset.clone(), cell.curvature_alpha.to_bits())) {
                slot.insert(Arc::new(ollivier_ricci(&g, cell.curvature_alpha)?));
            }
        }
        if cell.family == Family::PEGN && !p.features.contains_key(&key) {
            p.features.insert(key, ds.edge_features(&g)?.map(Arc::new));
        }
    }
    Ok(p)
}

fn fingerprint(cell: &CellConfig, ds: &Dataset) -> Result<String> {
    let payload = serde_json::json!({
        "cell": cell,
        "sources": ds.meta.sources,
        "split_seed": ds.meta.split_seed,
    });
    Ok(sha256_hex(&serde_json::to_vec(&payload)?))
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}

fn weight_key(cell: &CellConfig) -> String {
    serde_json::to_string(&cell.weight_source()).expect("cell configs serialize")
}

struct WeightJob {
    source: CellConfig,
    result: std::result::Result<(AveragedWeights, Vec<LayerMetrics>), String>,
}

fn run_weight_job(
    source: &CellConfig,
    prepared: &Prepared,
    out_dir: &Path,
) -> Result<(AveragedWeights, Vec<LayerMetrics>)> {
    let inputs = prepared.inputs(source)?;
    let spec = source.spec(inputs.info.as_ref().map(|i| i.dim()))?;
    let cfg = source.train_config();
    let avg = averaged_weights_all(
        &spec,
        &inputs.graph,
        inputs.info.as_deref(),
        &prepared.datasets[&source.dataset].split,
        &cfg,
        source.weight_runs,
    )?;
    let looped = giv::graph::add_self_loops(&inputs.graph)?;
    let stem = slug(&source.label());
    let mut layers = Vec::new();
    for (i, w) in avg.layers.iter().enumerate() {
        let layer = i + 1;
        let weights_file = format!("weights/{stem}.l{layer}.json");
        let heatmap_file = format!("heatmaps/{stem}.l{layer}.csv");
        WeightsFile::new(source.label(), &looped, w.clone())?.save(out_dir.join(&weights_file))?;
        export_heatmap(w, out_dir.join(&heatmap_file))?;
        layers.push(LayerMetrics {
            layer,
            dims: w.dims(),
            fluctuation: column_fluctuation(w),
            similarity_to_base: None,
            weights_file,
            heatmap_file,
        });
    }
    Ok((avg, layers))
}

fn run_cell(
    cell: &CellConfig,
    prepared: &Prepared,
    weights: &BTreeMap<String, &WeightJob>,
) -> Result<giv::trainer::RunSummary> {
    let inputs = prepared.inputs(cell)?;
    let mut spec = cell.spec(inputs.info.as_ref().map(|i| i.dim()))?;
    if cell.variant == Variant::Explicit {
        let job = weights[&weight_key(cell)];
        let (avg, _) = job.result.as_ref().map_err(|e| anyhow!("weight averaging failed: {e}"))?;
        spec = to_explicit(&spec, avg.layers.clone())?;
    }
    let split = &prepared.datasets[&cell.dataset].split;
    Ok(repeat_runs(&spec, &inputs.graph, inputs.info.as_deref(), split, &cell.train_config(), cell.runs)?)
}

pub struct Outcome {
    pub report: Report,
    pub failed_cells: usize,
}

pub fn run(matrix: &Matrix, base_dir: &Path, flags: &Overrides, out_dir: &Path) -> Result<Outcome> {
    let cells = matrix.expand(flags)?;
    let prepared = prepare_inputs(matrix, base_dir, &cells)?;
    fs::create_dir_all(out_dir.join("weights"))?;
    fs::create_dir_all(out_dir.join("heatmaps"))?;

    let mut sources: Vec<CellConfig> = Vec::new();
    for c in cells.iter().filter(|c| c.weights) {
        let s = c.weight_source();
        if !sources.contains(&s) {
            sources.push(s);
        }
    }
    let jobs: Vec<WeightJob> = sources
        .into_par_iter()
        .map(|source| {
            let result = run_weight_job(&source, &prepared, out_dir).map_err(|e| format!("{e:#}"));
            WeightJob { source, result }
        })
        .collect();
    let by_key: BTreeMap<String, &WeightJob> = jobs.iter().map(|j| (weight_key(&j.source), j)).collect();

    let summaries: Vec<Result<giv::trainer::RunSummary>> =
        cells.par_iter().map(|c| run_cell(c, &prepared, &by_key)).collect();

    let mut reports = Vec::with_capacity(cells.len());
    for (cell, summary) in cells.iter().zip(summaries) {
        let ds = &prepared.datasets[&cell.dataset];
        let mut r = CellReport {
            label: cell.label(),
            group: cell.group(),
            model: cell.variant.model_name(cell.family),
            config: cell.clone(),
            fingerprint: fingerprint(cell, ds)?,
            seeds: cell.train_config().seeds(cell.runs),
            mean: None,
            std: None,
            completed: 0,
            failed: 0,
            best_in_group: false,
            error: None,
            weights: None,
            runs: vec![],
        };
        match summary {
            Ok(s) => {
                r.completed = s.completed;
                r.failed = s.failed;
                r.runs = s.runs.iter().map(RunRow::from).collect();
                if s.completed == 0 {
                    r.error = Some(format!("all {} runs failed", s.failed));
                } else {
                    r.mean = Some(s.mean);
                    r.std = Some(s.std);
                }
            }
            Err(e) => r.error = Some(format!("{e:#}")),
        }
        if cell.weights && cell.variant != Variant::Explicit {
            match &by_key[&weight_key(cell)].result {
                Ok((avg, layers)) => {
                    r.weights = Some(WeightMetrics {
                        used_runs: avg.used_runs,
                        failed_runs: avg.failed_runs,
                        layers: layers.clone(),
                    })
                }
                Err(e) => r.error = Some(r.error.take().map_or(e.clone(), |prev| format!("{prev}; {e}"))),
            }
        }
        reports.push(r);
    }
    attach_similarities(&mut reports, &by_key);
    let groups = finish_groups(&mut reports);
    let failed_cells = reports.iter().filter(|r| !r.ok()).count();

    let mut datasets = BTreeMap::new();
    let mut resolved = Matrix { datasets: BTreeMap::new(), defaults: Overrides::default(), cells: Vec::new() };
    for (name, ds) in &prepared.datasets {
        let path = ds.dir.canonicalize().unwrap_or_else(|_| ds.dir.clone()).display().to_string();
        resolved.datasets.insert(name.clone(), path.clone());
        datasets.insert(
            name.clone(),
            DatasetEntry {
                path,
                sources: ds.meta.sources.clone(),
                split_seed: ds.meta.split_seed,
                split_sizes: ds.meta.split_sizes,
                split_scaled: ds.meta.split_scaled,
                summary: ds.meta.summary.clone(),
            },
        );
    }
    for g in &matrix.cells {
        resolved.cells.push(CellGroup {
            dataset: g.dataset.clone(),
            family: g.family,
            variants: g.variants.clone(),
            overrides: flags.over(&g.overrides.over(&matrix.defaults)),
        });
    }
    let report = Report { matrix: resolved, split_policy: SPLIT_POLICY.into(), datasets, cells: reports, groups };
    Ok(Outcome { report, failed_cells })
}

/// Cosine similarity of every variant's averaged weights against the base
/// cell of its group, layer by layer.
fn attach_similarities(reports: &mut [CellReport], jobs: &BTreeMap<String, &WeightJob>) {
    let vectors = |cell: &CellConfig| -> Option<Vec<(giv::diagnostics::WeightVector, String)>> {
        let (avg, _) = jobs.get(&weight_key(cell))?.result.as_ref().ok()?;
        Some(avg.layers.iter().map(|w| (to_vector(w, cell.label()), cell.label())).collect())
    };
    let bases: BTreeMap<String, CellConfig> = reports
        .iter()
        .filter(|r| r.config.variant == Variant::Base && r.weights.is_some())
        .map(|r| (r.group.clone(), r.config.clone()))
        .collect();
    for r in reports.iter_mut() {
        let Some(base) = bases.get(&r.group) else { continue };
        if r.config.variant == Variant::Base {
            continue;
        }
        let (Some(mine), Some(theirs), Some(w)) = (vectors(&r.config), vectors(base), r.weights.as_mut()) else {
            continue;
        };
        for (layer, ((a, _), (b, _))) in w.layers.iter_mut().zip(mine.iter().zip(&theirs)) {
            layer.similarity_to_base = cosine_similarity(a, b).ok();
        }
    }
}

pub fn write_outputs(report: &Report, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let json = out_dir.join("report.json");
    let csv = out_dir.join("report.csv");
    let txt = out_dir.join("report.txt");
    fs::write(&json, serde_json::to_string_pretty(report)?)?;
    fs::write(&csv, crate::report::render_csv(report))?;
    fs::write(&txt, crate::report::render_text(report, false))?;
    Ok(vec![json, csv, txt])
}
