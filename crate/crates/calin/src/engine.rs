//! The calibration algebra: renormalization of raw token scores, inversion
//! of null-probe confidences into diagonal matrices, exponential-decay
//! blending of the population and subgroup levels, and application of the
//! final matrices to query confidences.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::domain::{
    CalibrationArtifact, CalibrationMatrix, CalibrationMode, ConfidenceVector, DomainError,
    MatrixKind, RawTokenScores,
};

/// Default floor applied to null-probe entries before taking reciprocals.
pub const DEFAULT_PROBE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("degenerate scores: no label token carried positive probability")]
    DegenerateScores,
    #[error("no subgroup matrices provided")]
    EmptySubgroupMap,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Renormalizes raw per-token probabilities into a confidence vector
/// (each entry divided by the total mass).
pub fn renormalize(raw: &RawTokenScores) -> Result<ConfidenceVector, EngineError> {
    let sum: f64 = raw.scores().iter().sum();
    if sum <= 0.0 {
        return Err(EngineError::DegenerateScores);
    }
    let probs: Vec<f64> = raw.scores().iter().map(|s| s / sum).collect();
    Ok(ConfidenceVector::new(probs)?)
}

/// A matrix built from a null probe, with the indices that had to be floored
/// before inversion.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeMatrix {
    pub matrix: CalibrationMatrix,
    pub floored: Vec<usize>,
}

fn invert_null(
    null_conf: &ConfidenceVector,
    floor: f64,
    kind: MatrixKind,
) -> Result<ProbeMatrix, EngineError> {
    assert!(floor > 0.0, "probe floor must be positive");
    let mut floored = Vec::new();
    let diag: Vec<f64> = null_conf
        .probs()
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            if p < floor {
                floored.push(j);
                1.0 / floor
            } else {
                1.0 / p
            }
        })
        .collect();
    if !floored.is_empty() {
        log::warn!(
            "null probe entries {:?} below floor {floor}; reciprocal clamped",
            floored
        );
    }
    Ok(ProbeMatrix {
        matrix: CalibrationMatrix::new(diag, kind)?,
        floored,
    })
}

/// Population-level matrix U: elementwise reciprocal of the content-free
/// null-probe confidence.
pub fn population_matrix(
    null_conf: &ConfidenceVector,
    floor: f64,
) -> Result<ProbeMatrix, EngineError> {
    invert_null(null_conf, floor, MatrixKind::Population)
}

/// Subgroup-level matrix S_a: same inversion, applied to the
/// attribute-conditioned null-probe confidence.
pub fn subgroup_matrix(
    null_conf: &ConfidenceVector,
    floor: f64,
) -> Result<ProbeMatrix, EngineError> {
    invert_null(null_conf, floor, MatrixKind::Subgroup)
}

/// The maximum infinity-norm deviation of any subgroup diagonal from the
/// population diagonal.
pub fn max_deviation(
    u: &CalibrationMatrix,
    subgroup_matrices: &BTreeMap<String, CalibrationMatrix>,
) -> Result<f64, EngineError> {
    if subgroup_matrices.is_empty() {
        return Err(EngineError::EmptySubgroupMap);
    }
    let mut alpha: f64 = 0.0;
    for s in subgroup_matrices.values() {
        if s.dim() != u.dim() {
            return Err(EngineError::DimensionMismatch {
                expected: u.dim(),
                got: s.dim(),
            });
        }
        for (sj, uj) in s.diag().iter().zip(u.diag()) {
            alpha = alpha.max((sj - uj).abs());
        }
    }
    Ok(alpha)
}

/// Inputs to one subgroup's blend step.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendInputs<'a> {
    pub u: &'a [f64],
    pub s_a: &'a [f64],
    pub alpha: f64,
}

/// Exponential-decay blend of the subgroup diagonal toward the population
/// diagonal: c_a[j] = u[j] + (s_a[j] - u[j]) * exp(-|s_a[j] - u[j]| / sqrt(alpha + 1)).
///
/// Each output coordinate lies between u[j] and s_a[j], so positivity of the
/// inputs carries over.
pub fn blend(inputs: &BlendInputs) -> Result<Vec<f64>, EngineError> {
    if inputs.u.len() != inputs.s_a.len() {
        return Err(EngineError::DimensionMismatch {
            expected: inputs.u.len(),
            got: inputs.s_a.len(),
        });
    }
    let rate = 1.0 / (inputs.alpha + 1.0).sqrt();
    Ok(inputs
        .u
        .iter()
        .zip(inputs.s_a)
        .map(|(&u, &s)| {
            let d = s - u;
            u + d * (-rate * d.abs()).exp()
        })
        .collect())
}

/// Computes alpha and the final per-subgroup matrices for the requested mode.
/// `l1_only` copies U everywhere (alpha reported as 0), `l2_only` copies each
/// S_a (alpha still computed for diagnostics), `bilevel` blends.
pub fn finalize_matrices(
    u: &CalibrationMatrix,
    subgroup_matrices: &BTreeMap<String, CalibrationMatrix>,
    mode: CalibrationMode,
) -> Result<(f64, BTreeMap<String, CalibrationMatrix>), EngineError> {
    if subgroup_matrices.is_empty() {
        return Err(EngineError::EmptySubgroupMap);
    }
    match mode {
        CalibrationMode::L1Only => {
            let finals = subgroup_matrices
                .keys()
                .map(|a| {
                    CalibrationMatrix::new(u.diag().to_vec(), MatrixKind::Final)
                        .map(|m| (a.clone(), m))
                })
                .collect::<Result<BTreeMap<_, _>, _>>()?;
            Ok((0.0, finals))
        }
        CalibrationMode::L2Only => {
            let alpha = max_deviation(u, subgroup_matrices)?;
            let finals = subgroup_matrices
                .iter()
                .map(|(a, s)| {
                    CalibrationMatrix::new(s.diag().to_vec(), MatrixKind::Final)
                        .map(|m| (a.clone(), m))
                })
                .collect::<Result<BTreeMap<_, _>, _>>()?;
            Ok((alpha, finals))
        }
        CalibrationMode::Bilevel => {
            let alpha = max_deviation(u, subgroup_matrices)?;
            let finals = subgroup_matrices
                .iter()
                .map(|(a, s)| {
                    let c = blend(&BlendInputs {
                        u: u.diag(),
                        s_a: s.diag(),
                        alpha,
                    })?;
                    Ok((a.clone(), CalibrationMatrix::new(c, MatrixKind::Final)?))
                })
                .collect::<Result<BTreeMap<_, _>, EngineError>>()?;
            Ok((alpha, finals))
        }
    }
}

/// Softmax of the elementwise product of the calibration diagonal and the
/// confidence vector, max-shifted for stability.
pub fn apply_calibration(
    c: &CalibrationMatrix,
    raw_conf: &ConfidenceVector,
) -> Result<ConfidenceVector, EngineError> {
    if c.dim() != raw_conf.len() {
        return Err(EngineError::DimensionMismatch {
            expected: c.dim(),
            got: raw_conf.len(),
        });
    }
    let scaled: Vec<f64> = c
        .diag()
        .iter()
        .zip(raw_conf.probs())
        .map(|(d, p)| d * p)
        .collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(ConfidenceVector::new(
        exps.iter().map(|e| e / sum).collect(),
    )?)
}

/// Adjusted prediction: lowest-index argmax of a calibrated confidence and
/// its probability.
pub fn predict(conf: &ConfidenceVector) -> (usize, f64) {
    conf.argmax()
}

/// Recomputes an artifact's final matrices from its stored U, S and mode and
/// checks they match what was persisted.
pub fn verify_artifact(artifact: &CalibrationArtifact) -> Result<(), String> {
    let (alpha, finals) =
        finalize_matrices(&artifact.population_matrix, &artifact.subgroup_matrices, artifact.mode)
            .map_err(|e| e.to_string())?;
    let expected_alpha = match artifact.mode {
        CalibrationMode::L1Only => 0.0,
        _ => alpha,
    };
    if (artifact.alpha - expected_alpha).abs() > 1e-12 {
        return Err(format!(
            "alpha {} does not match recomputed {expected_alpha}",
            artifact.alpha
        ));
    }
    if finals.len() != artifact.final_matrices.len() {
        return Err("final matrix key sets differ".into());
    }
    for (a, c) in &finals {
        let stored = artifact
            .final_matrices
            .get(a)
            .ok_or_else(|| format!("missing final matrix for {a:?}"))?;
        for (x, y) in c.diag().iter().zip(stored.diag()) {
            if (x - y).abs() > 1e-12 {
                return Err(format!("final matrix for {a:?} does not recompute"));
            }
        }
    }
    Ok(())
}
