//! Conformal prediction sets and reliability metrics for classifier
//! probability outputs.
//!
//! - [`conformal`]: LAC scores, the finite-sample conformal quantile, and
//!   prediction sets.
//! - [`metrics`]: coverage rate, set size, size-stratified coverage
//!   (SSC/SSCS), ECE, and weighted one-vs-one AUC.
//! - [`synth`]: Gaussian stress-test datasets with a closed-form posterior,
//!   a built-in LDA classifier, and temperature distortion.
//! - [`ingest`]: prediction-file and manifest wire formats.
//! - [`harness`]: seeded splits, per-cell evaluation, and aggregation.

pub mod conformal;
pub mod error;
pub mod harness;
pub mod ingest;
pub mod metrics;
pub mod synth;

pub use conformal::{
    calibrate, calibration_scores, conformal_quantile, lac_scores, prediction_sets,
    CalibrationQuantile, PredictionSet, ProbabilityMatrix, ScoreKind, ScoreMatrix, Threshold,
};
pub use error::{Error, Result};
pub use harness::{run_cell, split, CellConfig, CellId, ExperimentConfig, MetricsReport};
pub use metrics::{
    auc_binary, auc_weighted_ovo, avg_set_size, coverage_rate, expected_calibration_error,
    size_stratified_coverage, SizeStratifiedCoverage, StratumCoverage,
};
pub use synth::{distort, fit_lda, generate, oracle_posterior, Dataset, Lda, Skew, SynthSpec};
