//! `giv`: dataset preparation, graph information files, experiment matrices
//! and message-weight diagnostics.
//!
//! Exit codes: 0 success, 1 every matrix cell failed, 2 usage or input error.

mod dataset;
mod matrix;
mod report;
mod runner;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use giv::diagnostics::{column_fluctuation, cosine_similarity, format_fluctuation, format_similarity, to_vector, WeightsFile};
use giv::info::{load_edge_features, ollivier_ricci, random_info, write_edge_features, DEFAULT_ALPHA};
use serde::Serialize;

use crate::dataset::Prepared;
use crate::matrix::{Matrix, Overrides};
use crate::report::Report;

#[derive(Parser)]
#[command(name = "giv", version, about = "Graph information vanishing experiments for implicit GNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate nodes.csv/edges.csv in a dataset directory and cache the graph and split.
    Prepare {
        dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        /// Rebuild the cache even if it is up to date.
        #[arg(long)]
        force: bool,
    },
    /// Write per-edge graph information for a prepared dataset.
    Info {
        dir: PathBuf,
        #[arg(long, value_enum)]
        provider: Provider,
        #[arg(long)]
        out: PathBuf,
        /// Lazy-walk mass kept at the node (curvature).
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        /// Seed of the random provider.
        #[arg(long, default_value_t = 2020)]
        seed: u64,
        /// Width of the random provider.
        #[arg(long, default_value_t = 1)]
        dim: usize,
        /// Edge-feature CSV checked by the persistence provider.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Run every cell of a matrix file (or the matrix embedded in a report).
    Run {
        matrix: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        weight_runs: Option<usize>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        base_seed: Option<u64>,
        /// Average message weights for every cell, not only explicit ones.
        #[arg(long)]
        weights: bool,
    },
    /// Column fluctuation of two averaged-weight files and their similarity.
    Diagnose {
        a: PathBuf,
        b: PathBuf,
        /// Write the metrics as JSON here as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a report.json as a table.
    Report {
        report: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Provider {
    Curvature,
    Random,
    Persistence,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Markdown,
    Csv,
    Json,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Prepare { dir, split_seed, force } => prepare(&dir, split_seed, force),
        Command::Info { dir, provider, out, alpha, seed, dim, input } => {
            info(&dir, provider, &out, alpha, seed, dim, input.as_deref())
        }
        Command::Run { matrix, out, workers, runs, weight_runs, max_epochs, patience, base_seed, weights } => {
            let flags = Overrides {
                runs,
                weight_runs,
                max_epochs,
                patience,
                base_seed,
                weights: weights.then_some(true),
                ..Default::default()
            };
            run(&matrix, &out, workers, &flags)
        }
        Command::Diagnose { a, b, out } => diagnose(&a, &b, out.as_deref()),
        Command::Report { report, format } => render(&report, format),
    }
}

fn prepare(dir: &Path, split_seed: u64, force: bool) -> Result<ExitCode> {
    let (meta, state) = match dataset::prepare(dir, split_seed, force)? {
        Prepared::Fresh(m) => (m, "prepared"),
        Prepared::UpToDate(m) => (m, "up to date"),
    };
    let s = &meta.summary;
    println!("{}: {state}", dir.display());
    println!(
        "  nodes {}  edges {} (directed)  features {}  classes {}  labeled {}",
        s.n_nodes, s.n_edges, s.n_features, s.n_classes, s.n_labeled
    );
    let r = &meta.load_report;
    println!(
        "  rows: {} node, {} edge; {} duplicate edges, {} self-loops dropped",
        r.node_rows, r.edge_rows, r.duplicate_edges, r.dropped_self_loops
    );
    let (tr, va, te) = meta.split_sizes;
    println!(
        "  split seed {}: train {tr}  val {va}  test {te}{}",
        meta.split_seed,
        if meta.split_scaled { " (scaled down)" } else { "" }
    );
    Ok(ExitCode::SUCCESS)
}

fn info(
    dir: &Path,
    provider: Provider,
    out: &Path,
    alpha: f64,
    seed: u64,
    dim: usize,
    input: Option<&Path>,
) -> Result<ExitCode> {
    let ds = dataset::load(dir)?;
    let g = &ds.graph;
    let info = match provider {
        Provider::Curvature => ollivier_ricci(g, alpha)?,
        Provider::Random => random_info(g, dim, seed)?,
        Provider::Persistence => {
            let default = dir.join(dataset::EDGE_FEATURE_FILE);
            let path = input.unwrap_or(&default);
            load_edge_features(g, path)?
        }
    };
    write_edge_features(g, &info, out)?;
    let values = info.values().data();
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    println!(
        "wrote {} rows of width {} to {} (range {lo:.4} .. {hi:.4})",
        g.n_edges(),
        info.dim(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn read_matrix(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    // A report carries its resolved matrix.
    let value = match (value.get("matrix"), value.get("split_policy")) {
        (Some(m), Some(_)) => m.clone(),
        _ => value,
    };
    serde_json::from_value(value).with_context(|| format!("invalid matrix {}", path.display()))
}

fn run(path: &Path, out: &Path, workers: Option<usize>, flags: &Overrides) -> Result<ExitCode> {
    let matrix = read_matrix(path)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            bail!("--workers must be positive");
        }
        pool = pool.num_threads(w);
    }
    let pool = pool.build()?;
    let outcome = pool.install(|| runner::run(&matrix, &base_dir, flags, out))?;
    let files = runner::write_outputs(&outcome.report, out)?;
    print!("{}", report::render_text(&outcome.report, false));
    for f in files {
        println!("wrote {}", f.display());
    }
    for c in outcome.report.cells.iter().filter(|c| !c.ok()) {
        eprintln!("cell {} failed: {}", c.label, c.error.as_deref().unwrap_or("no completed runs"));
    }
    if outcome.failed_cells == outcome.report.cells.len() {
        eprintln!("all {} cells failed", outcome.failed_cells);
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct Metrics {
    a: String,
    b: String,
    fluctuation_a: f64,
    fluctuation_b: f64,
    similarity: f64,
}

fn diagnose(a: &Path, b: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let wa = WeightsFile::load(a)?;
    let wb = WeightsFile::load(b)?;
    wa.check_aligned(&wb).context("alignment")?;
    let m = Metrics {
        a: wa.label.clone(),
        b: wb.label.clone(),
        fluctuation_a: column_fluctuation(&wa.weights),
        fluctuation_b: column_fluctuation(&wb.weights),
        similarity: cosine_similarity(&to_vector(&wa.weights, &wa.label), &to_vector(&wb.weights, &wb.label))?,
    };
    println!("C(A) {:<24} {}", m.a, format_fluctuation(m.fluctuation_a));
    println!("C(A) {:<24} {}", m.b, format_fluctuation(m.fluctuation_b));
    println!("cosineSIM                     {}", format_similarity(m.similarity));
    if let Some(path) = out {
        fs::write(path, serde_json::to_string_pretty(&m)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn render(path: &Path, format: Format) -> Result<ExitCode> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let report: Report = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let out = match format {
        Format::Text => report::render_text(&report, false),
        Format::Markdown => report::render_text(&report, true),
        Format::Csv => report::render_csv(&report),
        Format::Json => serde_json::to_string_pretty(&report)? + "\n",
    };
    print!("{out}");
    Ok(ExitCode::SUCCESS)
}
