//! Two-step top-N recommender: probabilistic spreading densifies a binary
//! user–item matrix, iterative local least squares fills the entries
//! spreading cannot reach, and the result is scored against a held-out
//! probe set.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod imputation;
pub mod linalg;
pub mod rng;
pub mod spreading;

pub use dataset::{BipartiteGraph, DataSplit, IndexMap, InteractionRecord, Link, LinkSet};
pub use error::{Error, Result};
pub use evaluation::{MetricsReport, RecommendationList};
pub use experiment::{ExperimentConfig, Mode};
pub use imputation::{IllsConfig, IllsTrace, NeighborSet, ValidationMask};
pub use spreading::{Provenance, ScoreMatrix, SpreadStats};

pub use faer::{Mat, MatRef};
