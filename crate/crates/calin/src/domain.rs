//! Core data types shared by every other module: class sets, attribute
//! schemas, confidence vectors, calibration matrices, prediction records
//! and the persisted calibration artifact.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for accepting a probability vector as normalized.
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("class set needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("duplicate class {kind}: {value}")]
    DuplicateClass { kind: &'static str, value: String },
    #[error("label token {0:?} contains internal whitespace")]
    MultiWordLabelToken(String),
    #[error("attribute {0:?} needs at least 2 values")]
    TooFewAttributeValues(String),
    #[error("duplicate attribute name {0:?}")]
    DuplicateAttribute(String),
    #[error("prompt attribute {0:?} is not in the schema")]
    UnknownPromptAttribute(String),
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("duplicate attribute {0:?} in subgroup key or intersection request")]
    DuplicateKeyAttribute(String),
    #[error("value {value:?} is not valid for attribute {attribute:?}")]
    UnknownAttributeValue { attribute: String, value: String },
    #[error("subgroup key must have at least one binding")]
    EmptySubgroupKey,
    #[error("confidence vector has a negative or non-finite entry: {0}")]
    BadProbability(f64),
    #[error("confidence vector sums to {0}, not 1")]
    NotNormalized(f64),
    #[error("raw token scores must be finite and non-negative, got {0}")]
    BadScore(f64),
    #[error("raw token scores are all zero")]
    AllZeroScores,
    #[error("calibration diagonal entry must be strictly positive and finite, got {0}")]
    BadDiagonal(f64),
    #[error("few-shot set size {0} is outside 1..=16")]
    BadFewShotSize(usize),
    #[error("label {0} is not a valid class id")]
    BadLabel(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// The ordered class set of a task. Each class carries a display name and the
/// single-token surface form the backend scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLabelSet {
    classes: Vec<ClassLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLabel {
    pub display_name: String,
    pub label_token: String,
}

impl ClassLabelSet {
    pub fn new(classes: Vec<ClassLabel>) -> Result<Self, DomainError> {
        if classes.len() < 2 {
            return Err(DomainError::TooFewClasses(classes.len()));
        }
        let mut names = std::collections::BTreeSet::new();
        let mut tokens = std::collections::BTreeSet::new();
        for c in &classes {
            if !names.insert(c.display_name.clone()) {
                return Err(DomainError::DuplicateClass {
                    kind: "display name",
                    value: c.display_name.clone(),
                });
            }
            if !tokens.insert(c.label_token.clone()) {
                return Err(DomainError::DuplicateClass {
                    kind: "label token",
                    value: c.label_token.clone(),
                });
            }
            if c.label_token.trim().is_empty()
                || c.label_token.trim().chars().any(char::is_whitespace)
            {
                return Err(DomainError::MultiWordLabelToken(c.label_token.clone()));
            }
        }
        Ok(Self { classes })
    }

    /// Convenience constructor from (display name, label token) pairs.
    pub fn from_pairs(pairs: &[(&str, &str)]) -> Result<Self, DomainError> {
        Self::new(
            pairs
                .iter()
                .map(|(n, t)| ClassLabel {
                    display_name: n.to_string(),
                    label_token: t.to_string(),
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: at least 2 classes
    }

    pub fn classes(&self) -> &[ClassLabel] {
        &self.classes
    }

    pub fn label_tokens(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.label_token.as_str()).collect()
    }

    pub fn display_names(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.display_name.as_str()).collect()
    }
}

/// The sensitive-attribute schema: every attribute with its admissible values,
/// plus the subset that gets rendered into prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    attributes: Vec<Attribute>,
    prompt_attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub values: Vec<String>,
}

impl AttributeSchema {
    pub fn new(
        attributes: Vec<Attribute>,
        prompt_attributes: Vec<String>,
    ) -> Result<Self, DomainError> {
        let mut seen = std::collections::BTreeSet::new();
        for attr in &attributes {
            if !seen.insert(attr.name.clone()) {
                return Err(DomainError::DuplicateAttribute(attr.name.clone()));
            }
            let distinct: std::collections::BTreeSet<_> = attr.values.iter().collect();
            if distinct.len() < 2 || distinct.len() != attr.values.len() {
                return Err(DomainError::TooFewAttributeValues(attr.name.clone()));
            }
        }
        for p in &prompt_attributes {
            if !seen.contains(p) {
                return Err(DomainError::UnknownPromptAttribute(p.clone()));
            }
        }
        Ok(Self {
            attributes,
            prompt_attributes,
        })
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn prompt_attributes(&self) -> &[String] {
        &self.prompt_attributes
    }

    pub fn attribute(&self, name: &str) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn is_valid_value(&self, name: &str, value: &str) -> bool {
        self.attribute(name)
            .map(|a| a.values.iter().any(|v| v == value))
            .unwrap_or(false)
    }
}

/// A subgroup selector: one binding per attribute. Single binding = atomic
/// subgroup, multiple bindings = intersectional subgroup.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubgroupKey {
    bindings: Vec<(String, String)>,
}

impl SubgroupKey {
    pub fn new(
        bindings: Vec<(String, String)>,
        schema: &AttributeSchema,
    ) -> Result<Self, DomainError> {
        if bindings.is_empty() {
            return Err(DomainError::EmptySubgroupKey);
        }
        let mut seen = std::collections::BTreeSet::new();
        for (name, value) in &bindings {
            if !seen.insert(name.clone()) {
                return Err(DomainError::DuplicateKeyAttribute(name.clone()));
            }
            let attr = schema
                .attribute(name)
                .ok_or_else(|| DomainError::UnknownAttribute(name.clone()))?;
            if !attr.values.iter().any(|v| v == value) {
                return Err(DomainError::UnknownAttributeValue {
                    attribute: name.clone(),
                    value: value.clone(),
                });
            }
        }
        Ok(Self { bindings })
    }

    pub fn bindings(&self) -> &[(String, String)] {
        &self.bindings
    }

    /// Exact-match test against a record's attribute map.
    pub fn matches(&self, attributes: &BTreeMap<String, String>) -> bool {
        self.bindings
            .iter()
            .all(|(name, value)| attributes.get(name).map(String::as_str) == Some(value.as_str()))
    }

    pub fn label(&self) -> String {
        self.bindings
            .iter()
            .map(|(n, v)| format!("{n}={v}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// A normalized probability distribution over the class set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfidenceVector {
    probs: Vec<f64>,
}

impl ConfidenceVector {
    pub fn new(probs: Vec<f64>) -> Result<Self, DomainError> {
        for &p in &probs {
            if !p.is_finite() || p < 0.0 {
                return Err(DomainError::BadProbability(p));
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(DomainError::NotNormalized(sum));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Lowest-index argmax and its probability.
    pub fn argmax(&self) -> (usize, f64) {
        let mut best = 0;
        for (j, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = j;
            }
        }
        (best, self.probs[best])
    }
}

/// Per-class next-token probabilities as surfaced by the backend, before
/// renormalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RawTokenScores {
    scores: Vec<f64>,
}

impl RawTokenScores {
    pub fn new(scores: Vec<f64>) -> Result<Self, DomainError> {
        for &s in &scores {
            if !s.is_finite() || s < 0.0 {
                return Err(DomainError::BadScore(s));
            }
        }
        if scores.iter().all(|&s| s == 0.0) {
            return Err(DomainError::AllZeroScores);
        }
        Ok(Self { scores })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    /// Population-level matrix U.
    Population,
    /// Subgroup-level matrix S_a.
    Subgroup,
    /// Final blended matrix C_a.
    Final,
}

/// A diagonal positive calibration matrix, stored as its diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMatrix {
    diag: Vec<f64>,
    kind: MatrixKind,
}

impl CalibrationMatrix {
    pub fn new(diag: Vec<f64>, kind: MatrixKind) -> Result<Self, DomainError> {
        for &d in &diag {
            if !d.is_finite() || d <= 0.0 {
                return Err(DomainError::BadDiagonal(d));
            }
        }
        Ok(Self { diag, kind })
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }
}

/// One few-shot exemplar: an opaque image handle, its attribute values and
/// its label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub image_ref: String,
    pub attributes: BTreeMap<String, String>,
    pub label: usize,
}

/// The few-shot exemplar set D presented before every probe and query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotSet {
    exemplars: Vec<Exemplar>,
}

impl FewShotSet {
    pub const MAX_SIZE: usize = 16;

    pub fn new(
        exemplars: Vec<Exemplar>,
        schema: &AttributeSchema,
        classes: &ClassLabelSet,
    ) -> Result<Self, DomainError> {
        if exemplars.is_empty() || exemplars.len() > Self::MAX_SIZE {
            return Err(DomainError::BadFewShotSize(exemplars.len()));
        }
        for ex in &exemplars {
            if ex.label >= classes.len() {
                return Err(DomainError::BadLabel(ex.label));
            }
            for (name, value) in &ex.attributes {
                if !schema.is_valid_value(name, value) {
                    return Err(DomainError::UnknownAttributeValue {
                        attribute: name.clone(),
                        value: value.clone(),
                    });
                }
            }
        }
        Ok(Self { exemplars })
    }

    pub fn exemplars(&self) -> &[Exemplar] {
        &self.exemplars
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }
}

/// One query's worth of state: attributes, confidences and the prediction.
/// The unit of ingestion and metric computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub attributes: BTreeMap<String, String>,
    pub true_label: Option<usize>,
    pub raw_conf: ConfidenceVector,
    pub calibrated_conf: Option<ConfidenceVector>,
    pub predicted_label: usize,
    pub predicted_confidence: f64,
}

impl PredictionRecord {
    /// The vector predictions are read from: calibrated when present, raw
    /// otherwise.
    pub fn governing_conf(&self) -> &ConfidenceVector {
        self.calibrated_conf.as_ref().unwrap_or(&self.raw_conf)
    }
}

/// A single validation failure with the offending field path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Checks every record invariant against the schema and class set. Returns
/// the full violation list rather than stopping at the first failure; the
/// result does not depend on field evaluation order.
pub fn validate_record(
    record: &PredictionRecord,
    schema: &AttributeSchema,
    classes: &ClassLabelSet,
) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    let num_classes = classes.len();

    for (name, value) in &record.attributes {
        if schema.attribute(name).is_none() {
            violations.push(Violation {
                path: format!("attributes.{name}"),
                message: "unknown attribute".into(),
            });
        } else if !schema.is_valid_value(name, value) {
            violations.push(Violation {
                path: format!("attributes.{name}"),
                message: format!("unknown value {value:?}"),
            });
        }
    }

    if record.raw_conf.len() != num_classes {
        violations.push(Violation {
            path: "raw_conf".into(),
            message: format!(
                "length {} does not match class count {num_classes}",
                record.raw_conf.len()
            ),
        });
    }
    if let Some(cal) = &record.calibrated_conf {
        if cal.len() != num_classes {
            violations.push(Violation {
                path: "calibrated_conf".into(),
                message: format!("length {} does not match class count {num_classes}", cal.len()),
            });
        }
    }
    if let Some(t) = record.true_label {
        if t >= num_classes {
            violations.push(Violation {
                path: "true_label".into(),
                message: format!("{t} is not a valid class id"),
            });
        }
    }

    // Prediction consistency only makes sense once lengths line up.
    let governing = record.governing_conf();
    if governing.len() == num_classes {
        let (argmax, conf) = governing.argmax();
        if record.predicted_label != argmax {
            violations.push(Violation {
                path: "predicted_label".into(),
                message: format!(
                    "{} disagrees with argmax {argmax} of the governing confidence",
                    record.predicted_label
                ),
            });
        } else if (record.predicted_confidence - conf).abs() > NORMALIZATION_TOL {
            violations.push(Violation {
                path: "predicted_confidence".into(),
                message: format!(
                    "{} does not equal the governing confidence entry {conf}",
                    record.predicted_confidence
                ),
            });
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Cross product of the named attributes' values, in schema value order.
pub fn intersect(
    schema: &AttributeSchema,
    names: &[&str],
) -> Result<Vec<SubgroupKey>, DomainError> {
    let mut seen = std::collections::BTreeSet::new();
    let mut attrs = Vec::with_capacity(names.len());
    for name in names {
        if !seen.insert(*name) {
            return Err(DomainError::DuplicateKeyAttribute(name.to_string()));
        }
        attrs.push(
            schema
                .attribute(name)
                .ok_or_else(|| DomainError::UnknownAttribute(name.to_string()))?,
        );
    }
    let mut keys = vec![Vec::new()];
    for attr in attrs {
        let mut next = Vec::with_capacity(keys.len() * attr.values.len());
        for prefix in &keys {
            for value in &attr.values {
                let mut bindings: Vec<(String, String)> = prefix.clone();
                bindings.push((attr.name.clone(), value.clone()));
                next.push(bindings);
            }
        }
        keys = next;
    }
    keys.into_iter()
        .map(|bindings| SubgroupKey::new(bindings, schema))
        .collect()
}

/// Which calibration mode produced an artifact's final matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    Bilevel,
    L1Only,
    L2Only,
}

impl std::fmt::Display for CalibrationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CalibrationMode::Bilevel => write!(f, "bilevel"),
            CalibrationMode::L1Only => write!(f, "l1_only"),
            CalibrationMode::L2Only => write!(f, "l2_only"),
        }
    }
}

/// Run provenance carried by an artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_id: String,
    pub template_id: String,
    pub few_shot_hash: String,
    pub timestamp: String,
}

/// The persisted result of a calibration build: null-probe vectors, the
/// population matrix U, subgroup matrices S_a, the deviation bound alpha and
/// the final matrices C_a.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationArtifact {
    pub class_set: ClassLabelSet,
    /// The single attribute the calibration conditions on.
    pub attribute: String,
    pub population_null: ConfidenceVector,
    pub subgroup_null: BTreeMap<String, ConfidenceVector>,
    pub population_matrix: CalibrationMatrix,
    pub subgroup_matrices: BTreeMap<String, CalibrationMatrix>,
    pub alpha: f64,
    pub final_matrices: BTreeMap<String, CalibrationMatrix>,
    pub mode: CalibrationMode,
    pub provenance: Provenance,
}
