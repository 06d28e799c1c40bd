//! Implicit graph neural networks under a shared reweight + aggregate
//! pipeline, the two graph-information randomization operators, and the
//! diagnostics used to compare learned message weights.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense `f64` tensors and a tape-based reverse-mode engine
//!   with the edge-indexed segment operations message passing needs.
//! * [`graph`]: graph container, CSV ingestion, self-loops and splits.
//! * [`info`]: per-edge graph information (Ollivier-Ricci curvature,
//!   edge-feature files, random substitution, random permutation).
//! * [`hyperbolic`]: hyperboloid exponential/logarithmic maps at the origin.
//! * [`models`]: CurvGN, PEGN, GAT, HGCN, AGNN and GCN, plus explicit
//!   conversion and message-weight extraction.
//! * [`trainer`]: Adam training loop, repeated runs and weight averaging.
//! * [`diagnostics`]: column fluctuation, scaled cosine similarity and
//!   heatmap export.

pub mod diagnostics;
pub mod error;
pub mod graph;
pub mod hyperbolic;
pub mod info;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
