//! Experiment reports: JSON and CSV files plus a text table laid out like
//! the result tables (models as rows, datasets as columns).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use giv::diagnostics::{format_fluctuation, format_similarity};
use giv::graph::GraphSummary;
use serde::{Deserialize, Serialize};

use crate::matrix::{CellConfig, Matrix, Variant};

pub const SPLIT_POLICY: &str =
    "one fixed split per dataset (split_seed); repeated runs vary only the model seed";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub path: String,
    pub sources: BTreeMap<String, String>,
    pub split_seed: u64,
    pub split_sizes: (usize, usize, usize),
    pub split_scaled: bool,
    pub summary: GraphSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub seed: u64,
    pub test_accuracy: f64,
    pub train_accuracy: f64,
    pub best_val_accuracy: f64,
    pub best_val_loss: Option<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub failure: Option<String>,
}

impl From<&giv::trainer::RunResult> for RunRow {
    fn from(r: &giv::trainer::RunResult) -> Self {
        RunRow {
            seed: r.seed,
            test_accuracy: r.test_accuracy,
            train_accuracy: r.train_accuracy,
            best_val_accuracy: r.best_val_accuracy,
            best_val_loss: r.best_val_loss.is_finite().then_some(r.best_val_loss),
            best_epoch: r.best_epoch,
            epochs_run: r.epochs_run,
            failure: r.failure.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerMetrics {
    /// 1-based graph layer.
    pub layer: usize,
    pub dims: usize,
    pub fluctuation: f64,
    /// Scaled cosine similarity to the base variant of the same group.
    pub similarity_to_base: Option<f64>,
    pub weights_file: String,
    pub heatmap_file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightMetrics {
    pub used_runs: usize,
    pub failed_runs: usize,
    pub layers: Vec<LayerMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub label: String,
    pub group: String,
    pub model: String,
    pub config: CellConfig,
    pub fingerprint: String,
    pub seeds: Vec<u64>,
    /// Test accuracy in `[0, 1]` over the completed runs.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub completed: usize,
    pub failed: usize,
    pub best_in_group: bool,
    pub error: Option<String>,
    pub weights: Option<WeightMetrics>,
    pub runs: Vec<RunRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub name: String,
    pub best: Vec<String>,
    /// Max minus min mean accuracy over the completed cells.
    pub spread: Option<f64>,
    /// Same over the base and A/B/C cells only.
    pub permutation_spread: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Resolved matrix; `giv run` accepts this file to repeat the experiment.
    pub matrix: Matrix,
    pub split_policy: String,
    pub datasets: BTreeMap<String, DatasetEntry>,
    pub cells: Vec<CellReport>,
    pub groups: Vec<GroupReport>,
}

impl CellReport {
    pub fn ok(&self) -> bool {
        self.error.is_none() && self.mean.is_some()
    }
}

fn spread(means: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = means.collect();
    if v.is_empty() {
        return None;
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    Some(max - min)
}

/// Marks the best cells of every group (ties all marked) and computes
/// spreads. Groups keep first-appearance order.
pub fn finish_groups(cells: &mut [CellReport]) -> Vec<GroupReport> {
    let mut names: Vec<String> = Vec::new();
    for c in cells.iter() {
        if !names.contains(&c.group) {
            names.push(c.group.clone());
        }
    }
    let mut groups = Vec::new();
    for name in names {
        let members: Vec<usize> = (0..cells.len()).filter(|&i| cells[i].group == name && cells[i].ok()).collect();
        let best_mean = members.iter().filter_map(|&i| cells[i].mean).fold(f64::NEG_INFINITY, f64::max);
        let mut best = Vec::new();
        for &i in &members {
            if cells[i].mean == Some(best_mean) {
                cells[i].best_in_group = true;
                best.push(cells[i].label.clone());
            }
        }
        let perm = [Variant::Base, Variant::A, Variant::B, Variant::C];
        groups.push(GroupReport {
            spread: spread(members.iter().filter_map(|&i| cells[i].mean)),
            permutation_spread: spread(
                members.iter().filter(|&&i| perm.contains(&cells[i].config.variant)).filter_map(|&i| cells[i].mean),
            ),
            best,
            name,
        });
    }
    groups
}

pub fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn cell_text(c: &CellReport) -> String {
    match (c.mean, c.std) {
        (Some(m), Some(s)) if c.error.is_none() => {
            let mut t = format!("{}±{}", pct(m), pct(s));
            if c.best_in_group {
                t.push('*');
            }
            if c.failed > 0 {
                let _ = write!(t, " ({} failed)", c.failed);
            }
            t
        }
        _ => "failed".to_string(),
    }
}

fn table(header: &[String], rows: &[Vec<String>], markdown: bool) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> =
            cells.iter().zip(&widths).map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count()))).collect();
        if markdown {
            format!("| {} |", padded.join(" | "))
        } else {
            padded.join("  ").trim_end().to_string()
        }
    };
    let mut out = String::new();
    out.push_str(&line(header));
    out.push('\n');
    if markdown {
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
    } else {
        let total = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
        out.push_str(&"-".repeat(total));
        out.push('\n');
    }
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

/// Accuracy table (percent, `*` = best in its dataset/family group), then
/// group spreads and weight metrics when present.
pub fn render_text(report: &Report, markdown: bool) -> String {
    let datasets: Vec<String> = {
        let mut v: Vec<String> = Vec::new();
        for c in &report.cells {
            if !v.contains(&c.config.dataset) {
                v.push(c.config.dataset.clone());
            }
        }
        v
    };
    let mut models: Vec<String> = Vec::new();
    for c in &report.cells {
        if !models.contains(&c.model) {
            models.push(c.model.clone());
        }
    }
    let mut header = vec!["Model".to_string()];
    header.extend(datasets.iter().cloned());
    let rows: Vec<Vec<String>> = models
        .iter()
        .map(|m| {
            let mut row = vec![m.clone()];
            for d in &datasets {
                let cell = report.cells.iter().find(|c| &c.model == m && &c.config.dataset == d);
                row.push(cell.map_or_else(|| "-".to_string(), cell_text));
            }
            row
        })
        .collect();
    let mut out = table(&header, &rows, markdown);

    let spreads: Vec<Vec<String>> = report
        .groups
        .iter()
        .map(|g| {
            vec![
                g.name.clone(),
                g.spread.map_or("-".into(), pct),
                g.permutation_spread.map_or("-".into(), pct),
                g.best.join(" "),
            ]
        })
        .collect();
    out.push('\n');
    let header: Vec<String> = ["Group", "Spread", "Perm. spread", "Best"].iter().map(|s| s.to_string()).collect();
    out.push_str(&table(&header, &spreads, markdown));

    let metric_rows: Vec<Vec<String>> = report
        .cells
        .iter()
        .filter_map(|c| c.weights.as_ref().map(|w| (c, w)))
        .flat_map(|(c, w)| {
            w.layers.iter().map(move |l| {
                vec![
                    c.label.clone(),
                    l.layer.to_string(),
                    l.dims.to_string(),
                    format_fluctuation(l.fluctuation),
                    l.similarity_to_base.map_or("-".into(), format_similarity),
                    format!("{}/{}", w.used_runs, w.used_runs + w.failed_runs),
                ]
            })
        })
        .collect();
    if !metric_rows.is_empty() {
        out.push('\n');
        let header: Vec<String> =
            ["Cell", "Layer", "m", "C(A)", "cosineSIM vs base", "Runs"].iter().map(|s| s.to_string()).collect();
        out.push_str(&table(&header, &metric_rows, markdown));
    }
    out
}

pub fn render_csv(report: &Report) -> String {
    let mut out = String::from(
        "group,dataset,family,variant,model,mean,std,completed,failed,best_in_group,fingerprint,\
         fluctuation_l1,similarity_l1,error\n",
    );
    for c in &report.cells {
        let l1 = c.weights.as_ref().and_then(|w| w.layers.first());
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
        let error = c.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},\"{}\"",
            c.group,
            c.config.dataset,
            c.config.family,
            c.config.variant,
            c.model,
            opt(c.mean),
            opt(c.std),
            c.completed,
            c.failed,
            c.best_in_group,
            c.fingerprint,
            opt(l1.map(|l| l.fluctuation)),
            opt(l1.and_then(|l| l.similarity_to_base)),
            error,
        );
    }
    out
}
