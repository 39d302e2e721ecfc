//! Bi-level, training-free confidence calibration for few-shot in-context
//! classification, with a demographic-fairness metric suite.
//!
//! The pipeline: probe the model with content-free null prompts to estimate
//! its prediction bias at the population level and per subgroup, invert the
//! probe confidences into diagonal calibration matrices, blend the two
//! levels with exponential decay, and apply the result to every query's
//! confidence at inference time. Metrics cover accuracy, expected
//! calibration error, the subgroup calibration-error gap, the mean
//! equalized-odds ratio and an equity-scaled calibration error.

pub mod backend;
pub mod cli;
pub mod domain;
pub mod engine;
pub mod metrics;
pub mod simulator;
