//! Python bindings for the calibration core: matrix building and
//! application, record evaluation, and the synthetic experiment runner.
//! Structured results cross the boundary as JSON strings so the Python side
//! can use plain dicts.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use calin::domain::{
    AttributeSchema, CalibrationMatrix, CalibrationMode, MatrixKind, PredictionRecord,
};
use calin::engine;
use calin::metrics::BinningConfig;
use calin::simulator::{self, ExperimentMode, SyntheticTaskSpec};

fn value_error<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_mode(mode: &str) -> PyResult<CalibrationMode> {
    match mode {
        "bilevel" => Ok(CalibrationMode::Bilevel),
        "l1" | "l1_only" => Ok(CalibrationMode::L1Only),
        "l2" | "l2_only" => Ok(CalibrationMode::L2Only),
        other => Err(value_error(format!("unknown calibration mode {other:?}"))),
    }
}

/// Normalizes raw per-label scores into a probability vector.
#[pyfunction]
fn renormalize(scores: Vec<f64>) -> PyResult<Vec<f64>> {
    let raw = calin::domain::RawTokenScores::new(scores).map_err(value_error)?;
    Ok(engine::renormalize(&raw).map_err(value_error)?.probs().to_vec())
}

/// Blends a population diagonal with a subgroup diagonal under deviation
/// bound `alpha`.
#[pyfunction]
fn blend(u: Vec<f64>, s_a: Vec<f64>, alpha: f64) -> PyResult<Vec<f64>> {
    engine::blend(&engine::BlendInputs {
        u: &u,
        s_a: &s_a,
        alpha,
    })
    .map_err(value_error)
}

/// A built calibration: population and per-subgroup diagonals plus the
/// finalized blend, ready to apply to raw confidences.
#[pyclass]
struct Calibration {
    alpha: f64,
    population: Vec<f64>,
    subgroups: BTreeMap<String, Vec<f64>>,
    finals: BTreeMap<String, CalibrationMatrix>,
    mode: String,
}

#[pymethods]
impl Calibration {
    /// Builds the calibration from null-probe confidence vectors: one
    /// population vector plus one per subgroup value.
    #[new]
    #[pyo3(signature = (population_null, subgroup_null, mode="bilevel", floor=1e-6))]
    fn new(
        population_null: Vec<f64>,
        subgroup_null: BTreeMap<String, Vec<f64>>,
        mode: &str,
        floor: f64,
    ) -> PyResult<Self> {
        let cal_mode = parse_mode(mode)?;
        let population_conf =
            calin::domain::ConfidenceVector::new(population_null).map_err(value_error)?;
        let population = engine::population_matrix(&population_conf, floor).map_err(value_error)?;
        let mut subgroup_matrices = BTreeMap::new();
        for (value, probs) in subgroup_null {
            let conf = calin::domain::ConfidenceVector::new(probs).map_err(value_error)?;
            let built = engine::subgroup_matrix(&conf, floor).map_err(value_error)?;
            subgroup_matrices.insert(value, built.matrix);
        }
        let (alpha, finals) =
            engine::finalize_matrices(&population.matrix, &subgroup_matrices, cal_mode)
                .map_err(value_error)?;
        Ok(Self {
            alpha,
            population: population.matrix.diag().to_vec(),
            subgroups: subgroup_matrices
                .iter()
                .map(|(k, m)| (k.clone(), m.diag().to_vec()))
                .collect(),
            finals,
            mode: mode.to_string(),
        })
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.alpha
    }

    #[getter]
    fn mode(&self) -> &str {
        &self.mode
    }

    #[getter]
    fn population_diag(&self) -> Vec<f64> {
        self.population.clone()
    }

    fn subgroup_diag(&self, value: &str) -> PyResult<Vec<f64>> {
        self.subgroups
            .get(value)
            .cloned()
            .ok_or_else(|| value_error(format!("no subgroup {value:?}")))
    }

    fn final_diag(&self, value: &str) -> PyResult<Vec<f64>> {
        self.finals
            .get(value)
            .map(|m| m.diag().to_vec())
            .ok_or_else(|| value_error(format!("no subgroup {value:?}")))
    }

    /// Applies the subgroup's final matrix to a raw confidence vector.
    /// Returns (calibrated probabilities, predicted label, confidence).
    fn apply(&self, value: &str, raw_conf: Vec<f64>) -> PyResult<(Vec<f64>, usize, f64)> {
        let matrix = self
            .finals
            .get(value)
            .ok_or_else(|| value_error(format!("no subgroup {value:?}")))?;
        let conf = calin::domain::ConfidenceVector::new(raw_conf).map_err(value_error)?;
        let calibrated = engine::apply_calibration(matrix, &conf).map_err(value_error)?;
        let (label, confidence) = engine::predict(&calibrated);
        Ok((calibrated.probs().to_vec(), label, confidence))
    }
}

/// Applies an arbitrary positive diagonal to a raw confidence vector.
#[pyfunction]
fn apply_diagonal(diag: Vec<f64>, raw_conf: Vec<f64>) -> PyResult<Vec<f64>> {
    let matrix = CalibrationMatrix::new(diag, MatrixKind::Final).map_err(value_error)?;
    let conf = calin::domain::ConfidenceVector::new(raw_conf).map_err(value_error)?;
    Ok(engine::apply_calibration(&matrix, &conf)
        .map_err(value_error)?
        .probs()
        .to_vec())
}

/// Evaluates a JSON array of prediction records against a schema and returns
/// the metric report as a JSON string.
#[pyfunction]
#[pyo3(signature = (records_json, schema_json, num_bins=10))]
fn evaluate_records(records_json: &str, schema_json: &str, num_bins: usize) -> PyResult<String> {
    let records: Vec<PredictionRecord> =
        serde_json::from_str(records_json).map_err(value_error)?;
    let schema: AttributeSchema = serde_json::from_str(schema_json).map_err(value_error)?;
    let binning = BinningConfig::new(num_bins);
    let report = calin::metrics::full_report(&records, &schema, &binning).map_err(value_error)?;
    serde_json::to_string(&report).map_err(value_error)
}

/// Runs the synthetic biased-task experiment and returns, as a JSON string,
/// a map from mode name to its metric report.
#[pyfunction]
#[pyo3(signature = (n=2000, seed=None, modes=None))]
fn simulate(n: usize, seed: Option<u64>, modes: Option<Vec<String>>) -> PyResult<String> {
    let mut spec = SyntheticTaskSpec::default_biased();
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let modes: Vec<ExperimentMode> = match modes {
        Some(names) => names
            .iter()
            .map(|m| m.parse().map_err(value_error))
            .collect::<PyResult<_>>()?,
        None => vec![
            ExperimentMode::L1Only,
            ExperimentMode::L2Only,
            ExperimentMode::Bilevel,
        ],
    };
    let result = simulator::run_experiment(&spec, n, &modes, &BinningConfig::default())
        .map_err(value_error)?;
    let reports: BTreeMap<String, &calin::metrics::MetricReport> = result
        .outcomes
        .iter()
        .map(|(mode, outcome)| (mode.to_string(), &outcome.report))
        .collect();
    serde_json::to_string(&reports).map_err(value_error)
}

#[pymodule]
fn calin_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(renormalize, m)?)?;
    m.add_function(wrap_pyfunction!(blend, m)?)?;
    m.add_function(wrap_pyfunction!(apply_diagonal, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_records, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_class::<Calibration>()?;
    Ok(())
}
