//! Hyperspectral unmixing with graph-regularized, sparseness-constrained
//! nonnegative matrix factorization.
//!
//! The crate provides the four solver variants (NMF, GNMF, NMF-SMC,
//! GNMF-SMC), a synthetic mixed-pixel scene generator, angle-based
//! evaluation (SAD/AAD) and the `unmix` command-line front end.

pub mod cli;
pub mod dataio;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod simdata;
pub mod sparseness;
pub mod unmixing;

pub use error::{Result, UnmixError};
pub use graph::{knn_graph, laplacian, PixelGraph, WeightScheme};
pub use metrics::{evaluate, match_endmembers, EvaluationReport};
pub use model::{
    column_normalize, validate_scene, AbundanceMatrix, EndmemberMatrix, HyperspectralScene, InitStrategy,
    SumToOne, UnmixConfig, Variant,
};
pub use simdata::{simulate, SimConfig, SimulatedScene};
pub use sparseness::{s_measure, sparseness_cost, SMeasureParams};
pub use unmixing::{solve, Objective, Termination, UnmixResult};
