//! Experiment matrix files and their resolution into concrete cells.
//!
//! Values are resolved as command-line flags, then the cell's `overrides`,
//! then the matrix `defaults`, then the per-family built-ins.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use anyhow::{bail, Result};
use giv::models::{Family, GcnWeights, ModelSpec, Randomization};
use giv::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Base,
    /// Permutation seeds 0, 10, 100.
    A,
    B,
    C,
    /// Uniform(0, 1) substitution with seed 2020 or 2021.
    Rand,
    Rand2021,
    /// LTS replaced by averaged weights of the base model.
    Explicit,
    /// GCN with unit weights.
    Ones,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Base,
        Variant::A,
        Variant::B,
        Variant::C,
        Variant::Rand,
        Variant::Rand2021,
        Variant::Explicit,
        Variant::Ones,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::A => "A",
            Variant::B => "B",
            Variant::C => "C",
            Variant::Rand => "Rand",
            Variant::Rand2021 => "Rand2021",
            Variant::Explicit => "E",
            Variant::Ones => "1",
        }
    }

    pub fn permutation_seed(self) -> Option<u64> {
        match self {
            Variant::A => Some(0),
            Variant::B => Some(10),
            Variant::C => Some(100),
            _ => None,
        }
    }

    pub fn random_seed(self) -> Option<u64> {
        match self {
            Variant::Rand => Some(2020),
            Variant::Rand2021 => Some(2021),
            _ => None,
        }
    }

    /// Row label in the style of the result tables: `GAT`, `GAT_A`,
    /// `RandGAT`, `GAT_E`, `GCN_1`.
    pub fn model_name(self, family: Family) -> String {
        match self {
            Variant::Base => family.name().to_string(),
            Variant::Rand => format!("Rand{family}"),
            Variant::Rand2021 => format!("Rand{family}(2021)"),
            v => format!("{family}_{}", v.key()),
        }
    }

    pub fn check(self, family: Family) -> Result<()> {
        let ok = match self {
            Variant::Base | Variant::A | Variant::B | Variant::C => true,
            Variant::Rand | Variant::Rand2021 | Variant::Explicit => family.is_implicit(),
            Variant::Ones => family == Family::GCN,
        };
        if !ok {
            bail!("variant {:?} does not apply to {family}", self.key());
        }
        Ok(())
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Variant {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().trim_start_matches('_');
        Variant::ALL
            .into_iter()
            .find(|v| v.key().eq_ignore_ascii_case(s))
            .ok_or_else(|| anyhow::anyhow!("unknown variant {s:?} (expected base, A, B, C, Rand, Rand2021, E or 1)"))
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.key())
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Every knob a matrix may set. Absent fields fall through to the next level.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_runs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_heads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub propagation_layers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lts_hidden: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub info_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vector_tau_hidden: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vector_tau_output: Option<bool>,
    /// Negative disables the slope.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leaky_slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hyperbolic_k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curvature_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resample_per_epoch: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalize_features: Option<bool>,
    /// Also average message weights over `weight_runs` and attach metrics.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<bool>,
}

macro_rules! layer {
    ($hi:expr, $lo:expr, $($f:ident),*) => {
        Overrides { $($f: $hi.$f.clone().or_else(|| $lo.$f.clone()),)* }
    };
}

impl Overrides {
    /// Fields of `self` win over `lower`.
    pub fn over(&self, lower: &Overrides) -> Overrides {
        layer!(
            self, lower, runs, weight_runs, base_seed, learning_rate, weight_decay, max_epochs, patience,
            dropout, hidden, heads, output_heads, propagation_layers, lts_hidden, info_dim,
            vector_tau_hidden, vector_tau_output, leaky_slope, hyperbolic_k, curvature_alpha,
            resample_per_epoch, normalize_features, weights
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellGroup {
    pub dataset: String,
    pub family: Family,
    pub variants: Vec<Variant>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub overrides: Overrides,
}

fn is_default(o: &Overrides) -> bool {
    *o == Overrides::default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matrix {
    /// Dataset name to directory; relative paths are resolved against the
    /// matrix file's directory.
    pub datasets: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub defaults: Overrides,
    pub cells: Vec<CellGroup>,
}

/// One fully resolved experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub dataset: String,
    pub family: Family,
    pub variant: Variant,
    pub runs: usize,
    pub weight_runs: usize,
    pub base_seed: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub dropout: f64,
    pub hidden: usize,
    pub heads: usize,
    pub output_heads: usize,
    pub propagation_layers: usize,
    pub lts_hidden: usize,
    /// `None` until the information width is known from the dataset.
    pub info_dim: Option<usize>,
    pub vector_tau_hidden: bool,
    pub vector_tau_output: bool,
    pub leaky_slope: Option<f64>,
    pub hyperbolic_k: f64,
    pub curvature_alpha: f64,
    pub resample_per_epoch: bool,
    pub normalize_features: bool,
    pub weights: bool,
}

impl CellConfig {
    pub fn resolve(dataset: &str, family: Family, variant: Variant, o: &Overrides) -> Result<CellConfig> {
        variant.check(family)?;
        let spec = ModelSpec::new(family);
        let train = TrainConfig::for_family(family);
        let cell = CellConfig {
            dataset: dataset.to_string(),
            family,
            variant,
            runs: o.runs.unwrap_or(train.runs),
            weight_runs: o.weight_runs.unwrap_or(train.weight_runs),
            base_seed: o.base_seed.unwrap_or(train.base_seed),
            learning_rate: o.learning_rate.unwrap_or(train.learning_rate),
            weight_decay: o.weight_decay.unwrap_or(train.weight_decay),
            max_epochs: o.max_epochs.unwrap_or(train.max_epochs),
            // An unset patience never exceeds the epoch budget.
            patience: o.patience.unwrap_or(train.patience.min(o.max_epochs.unwrap_or(train.max_epochs))),
            dropout: o.dropout.unwrap_or(train.dropout),
            hidden: o.hidden.unwrap_or(spec.hidden),
            heads: o.heads.unwrap_or(spec.heads),
            output_heads: o.output_heads.unwrap_or(spec.output_heads),
            propagation_layers: o.propagation_layers.unwrap_or(spec.propagation_layers),
            lts_hidden: o.lts_hidden.unwrap_or(spec.lts_hidden),
            info_dim: o.info_dim,
            vector_tau_hidden: o.vector_tau_hidden.unwrap_or(spec.vector_tau_hidden),
            vector_tau_output: o.vector_tau_output.unwrap_or(spec.vector_tau_output),
            leaky_slope: match o.leaky_slope {
                Some(s) if s < 0.0 => None,
                Some(s) => Some(s),
                None => spec.leaky_slope,
            },
            hyperbolic_k: o.hyperbolic_k.unwrap_or(spec.hyperbolic_k),
            curvature_alpha: o.curvature_alpha.unwrap_or(giv::info::DEFAULT_ALPHA),
            resample_per_epoch: o.resample_per_epoch.unwrap_or(false),
            normalize_features: o.normalize_features.unwrap_or(true),
            weights: o.weights.unwrap_or(false) || variant == Variant::Explicit,
        };
        if cell.runs < 2 {
            bail!("{}: runs must be at least 2", cell.label());
        }
        if cell.weights && cell.weight_runs == 0 {
            bail!("{}: weight_runs must be positive", cell.label());
        }
        cell.train_config().validate()?;
        cell.spec(None)?.validate()?;
        Ok(cell)
    }

    pub fn label(&self) -> String {
        format!("{}/{}", self.dataset, self.variant.model_name(self.family))
    }

    pub fn group(&self) -> String {
        format!("{}/{}", self.dataset, self.family)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            max_epochs: self.max_epochs,
            patience: self.patience,
            dropout: self.dropout,
            base_seed: self.base_seed,
            runs: self.runs,
            weight_runs: self.weight_runs,
        }
    }

    /// The base (non-randomized) spec; explicit conversion is applied by the
    /// runner once averaged weights exist.
    pub fn base_spec(&self, info_dim: Option<usize>) -> ModelSpec {
        let mut spec = ModelSpec::new(self.family);
        spec.hidden = self.hidden;
        spec.heads = self.heads;
        spec.output_heads = self.output_heads;
        spec.propagation_layers = self.propagation_layers;
        spec.lts_hidden = self.lts_hidden;
        if let Some(d) = self.info_dim.or(info_dim) {
            spec.info_dim = d;
        }
        spec.vector_tau_hidden = self.vector_tau_hidden;
        spec.vector_tau_output = self.vector_tau_output;
        spec.leaky_slope = self.leaky_slope;
        spec.hyperbolic_k = self.hyperbolic_k;
        spec
    }

    pub fn spec(&self, info_dim: Option<usize>) -> Result<ModelSpec> {
        let mut spec = self.base_spec(info_dim);
        if self.family == Family::GCN {
            spec.gcn_weights = match (self.variant, self.variant.permutation_seed()) {
                (_, Some(seed)) => GcnWeights::Permuted { seed },
                (Variant::Ones, _) => GcnWeights::Ones,
                _ => GcnWeights::Normalized,
            };
        } else if let Some(seed) = self.variant.permutation_seed() {
            spec.randomization = Randomization::Permuted { seed };
        } else if let Some(seed) = self.variant.random_seed() {
            spec.randomization = Randomization::Random { seed, resample_per_epoch: self.resample_per_epoch };
        }
        Ok(spec)
    }

    /// Configuration of the base cell whose averaged weights this cell uses.
    pub fn weight_source(&self) -> CellConfig {
        let mut base = self.clone();
        if self.variant == Variant::Explicit {
            base.variant = Variant::Base;
        }
        base.runs = 0;
        base.weights = true;
        base
    }
}

impl Matrix {
    pub fn expand(&self, flags: &Overrides) -> Result<Vec<CellConfig>> {
        if self.cells.is_empty() {
            bail!("matrix has no cells");
        }
        let mut out = Vec::new();
        for group in &self.cells {
            if !self.datasets.contains_key(&group.dataset) {
                bail!("cell names unknown dataset {:?}", group.dataset);
            }
            if group.variants.is_empty() {
                bail!("{}/{} lists no variants", group.dataset, group.family);
            }
            let o = flags.over(&group.overrides.over(&self.defaults));
            for &v in &group.variants {
                let cell = CellConfig::resolve(&group.dataset, group.family, v, &o)?;
                if out.iter().any(|c: &CellConfig| c.label() == cell.label()) {
                    bail!("duplicate cell {}", cell.label());
                }
                out.push(cell);
            }
        }
        Ok(out)
    }
}
