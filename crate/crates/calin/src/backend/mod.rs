//! The model-query abstraction: prompt rendering, a wire client for
//! chat-completion endpoints that expose token log-probabilities, a
//! deterministic mock backend, and the probe/query orchestration of the
//! calibration build.

pub mod http;
pub mod mock;
pub mod prompt;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{
    AttributeSchema, CalibrationArtifact, CalibrationMatrix, CalibrationMode, ClassLabelSet,
    ConfidenceVector, DomainError, FewShotSet, Provenance, RawTokenScores,
};
use crate::engine::{self, EngineError};
use prompt::{render, PromptPart, PromptTemplate};

/// Default top-logprobs depth requested from the backend.
pub const DEFAULT_TOP_LOGPROBS: usize = 20;
/// Default floor for label tokens absent from the returned alternatives.
pub const DEFAULT_MISSING_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("credential environment variable {0} is not set")]
    MissingCredential(String),
    #[error("response carries no token log-probabilities; the backend cannot support probing")]
    NoLogprobs,
    #[error("label {0} is not a valid class id")]
    BadLabel(usize),
    #[error("an exemplar label requires both image and attributes")]
    LabelWithoutImage,
    #[error("query requires an image")]
    MissingImage,
    #[error("unresolved template placeholder {0}")]
    UnresolvedPlaceholder(String),
    #[error("attribute {0:?} is not in the schema")]
    UnknownAttribute(String),
    #[error("transport failure after retries: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    BadResponse(String),
    #[error("image {0:?} could not be read: {1}")]
    ImageRead(String, String),
    #[error("audit log failure: {0}")]
    Audit(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Wire-level configuration for a chat-completion backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API credential. The
    /// value itself never reaches logs or artifacts.
    pub credential_env: String,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: usize,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default)]
    pub system_prompt: Option<String>,
    #[serde(default)]
    pub audit_log: Option<std::path::PathBuf>,
}

fn default_parallel() -> usize {
    4
}
fn default_retries() -> u32 {
    2
}
fn default_timeout() -> u64 {
    60
}
fn default_top_logprobs() -> usize {
    DEFAULT_TOP_LOGPROBS
}
fn default_backoff() -> u64 {
    500
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_parallel < 1 {
            return Err(BackendError::BadResponse(
                "max_parallel must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Structured description of what a request is asking, alongside its
/// rendered form. Wire backends send the rendered parts; the mock backend
/// answers from the structured kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub few_shot: Vec<Vec<PromptPart>>,
    pub query: Vec<PromptPart>,
    pub kind: RequestKind,
    pub label_tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RequestKind {
    NullPopulation,
    NullSubgroup {
        attribute: String,
        value: String,
    },
    Query {
        id: String,
        image_ref: String,
        attributes: BTreeMap<String, String>,
    },
}

/// One alternative for the first generated token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

/// Anything that can answer a single-token completion request with
/// top-logprobs for the first generated token.
pub trait Backend: Sync {
    fn model_id(&self) -> &str;
    fn top_logprobs(&self, request: &CompletionRequest) -> Result<Vec<TokenLogprob>, BackendError>;
}

/// Per-label scores lifted out of a top-logprobs list.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedScores {
    pub raw: RawTokenScores,
    /// How many label tokens were actually present among the alternatives.
    pub matched: usize,
}

/// Maps the first generated token's alternatives onto per-label scores:
/// exp(logprob) when the label token appears, `missing_floor` otherwise.
/// Matching is exact with a single leading-space-insensitive fallback.
/// Scores are not normalized here.
pub fn extract_label_scores(
    response_logprobs: &[TokenLogprob],
    label_tokens: &[&str],
    missing_floor: f64,
) -> Result<ExtractedScores, BackendError> {
    if response_logprobs.is_empty() {
        return Err(BackendError::NoLogprobs);
    }
    let mut matched = 0usize;
    let scores: Vec<f64> = label_tokens
        .iter()
        .map(|label| {
            let hit = response_logprobs
                .iter()
                .find(|tl| tl.token == *label)
                .or_else(|| {
                    response_logprobs
                        .iter()
                        .find(|tl| tl.token.strip_prefix(' ').unwrap_or(&tl.token) == *label)
                });
            match hit {
                Some(tl) => {
                    matched += 1;
                    tl.logprob.exp()
                }
                None => missing_floor,
            }
        })
        .collect();
    if matched == 0 {
        log::warn!("no label token matched; every score floored at {missing_floor}");
    }
    Ok(ExtractedScores {
        raw: RawTokenScores::new(scores)?,
        matched,
    })
}

/// What a probe or query request came back as.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub kind: RequestKind,
    pub raw: RawTokenScores,
    pub conf: ConfidenceVector,
    pub transcript_ref: String,
    pub matched: usize,
}

/// The full null-probe sweep for one calibration build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub population: ProbeResult,
    pub subgroups: BTreeMap<String, ProbeResult>,
}

/// Inputs shared by every request of one probe run.
pub struct ProbeRun<'a> {
    pub few_shot: &'a FewShotSet,
    pub template: &'a PromptTemplate,
    pub classes: &'a ClassLabelSet,
    pub schema: &'a AttributeSchema,
    pub attribute: &'a str,
}

fn render_few_shot(
    few_shot: &FewShotSet,
    template: &PromptTemplate,
    classes: &ClassLabelSet,
) -> Result<Vec<Vec<PromptPart>>, BackendError> {
    few_shot
        .exemplars()
        .iter()
        .map(|ex| {
            render(
                template,
                classes,
                Some(&ex.image_ref),
                Some(&ex.attributes),
                Some(ex.label),
            )
        })
        .collect()
}

/// Stable content hash of a request, used as transcript reference.
pub fn request_hash(request: &CompletionRequest) -> String {
    let json = serde_json::to_vec(request).expect("request serializes");
    let mut hasher = Sha256::new();
    hasher.update(&json);
    format!("{:x}", hasher.finalize())
}

fn issue(
    backend: &dyn Backend,
    request: &CompletionRequest,
    repeats: usize,
) -> Result<ProbeResult, BackendError> {
    assert!(repeats >= 1);
    let labels: Vec<&str> = request.label_tokens.iter().map(String::as_str).collect();
    let mut summed: Vec<f64> = Vec::new();
    let mut matched = 0usize;
    for _ in 0..repeats {
        let top = backend.top_logprobs(request)?;
        let extracted = extract_label_scores(&top, &labels, DEFAULT_MISSING_FLOOR)?;
        matched = matched.max(extracted.matched);
        if summed.is_empty() {
            summed = extracted.raw.scores().to_vec();
        } else {
            for (acc, s) in summed.iter_mut().zip(extracted.raw.scores()) {
                *acc += s;
            }
        }
    }
    for s in summed.iter_mut() {
        *s /= repeats as f64;
    }
    let raw = RawTokenScores::new(summed)?;
    let conf = engine::renormalize(&raw)?;
    Ok(ProbeResult {
        kind: request.kind.clone(),
        raw,
        conf,
        transcript_ref: request_hash(request),
        matched,
    })
}

/// Issues the content-free null probe plus one attribute-conditioned probe
/// per value, all preceded by the same few-shot exemplar messages. Exactly
/// `1 + |values|` requests per repeat, in deterministic order.
pub fn run_probes_with(
    backend: &dyn Backend,
    run: &ProbeRun<'_>,
    repeats: usize,
) -> Result<ProbeSet, BackendError> {
    let attr = run
        .schema
        .attribute(run.attribute)
        .ok_or_else(|| BackendError::UnknownAttribute(run.attribute.to_string()))?;
    let few_shot = render_few_shot(run.few_shot, run.template, run.classes)?;
    let label_tokens: Vec<String> = run
        .classes
        .label_tokens()
        .iter()
        .map(|t| t.to_string())
        .collect();

    let population_request = CompletionRequest {
        few_shot: few_shot.clone(),
        query: render(run.template, run.classes, None, None, None)?,
        kind: RequestKind::NullPopulation,
        label_tokens: label_tokens.clone(),
    };
    let population = issue(backend, &population_request, repeats)?;

    let mut subgroups = BTreeMap::new();
    for value in &attr.values {
        let mut attrs = BTreeMap::new();
        attrs.insert(run.attribute.to_string(), value.clone());
        let request = CompletionRequest {
            few_shot: few_shot.clone(),
            query: render(run.template, run.classes, None, Some(&attrs), None)?,
            kind: RequestKind::NullSubgroup {
                attribute: run.attribute.to_string(),
                value: value.clone(),
            },
            label_tokens: label_tokens.clone(),
        };
        subgroups.insert(value.clone(), issue(backend, &request, repeats)?);
    }
    Ok(ProbeSet {
        population,
        subgroups,
    })
}

/// Issues a single query request: few-shot exemplars plus the image-bearing
/// query prompt.
pub fn run_query_with(
    backend: &dyn Backend,
    run: &ProbeRun<'_>,
    id: &str,
    image_ref: &str,
    attributes: &BTreeMap<String, String>,
) -> Result<ProbeResult, BackendError> {
    if image_ref.is_empty() {
        return Err(BackendError::MissingImage);
    }
    let few_shot = render_few_shot(run.few_shot, run.template, run.classes)?;
    let request = CompletionRequest {
        few_shot,
        query: render(run.template, run.classes, Some(image_ref), Some(attributes), None)?,
        kind: RequestKind::Query {
            id: id.to_string(),
            image_ref: image_ref.to_string(),
            attributes: attributes.clone(),
        },
        label_tokens: run
            .classes
            .label_tokens()
            .iter()
            .map(|t| t.to_string())
            .collect(),
    };
    issue(backend, &request, 1)
}

/// A built artifact plus the flooring diagnostics of its probe inversions.
#[derive(Debug, Clone)]
pub struct ArtifactBuild {
    pub artifact: CalibrationArtifact,
    pub population_floored: Vec<usize>,
    pub subgroup_floored: BTreeMap<String, Vec<usize>>,
}

/// Turns a probe sweep into the persisted calibration artifact: invert the
/// nulls, compute alpha, finalize per the mode.
pub fn build_artifact(
    probes: &ProbeSet,
    classes: &ClassLabelSet,
    attribute: &str,
    mode: CalibrationMode,
    floor: f64,
    provenance: Provenance,
) -> Result<ArtifactBuild, BackendError> {
    let population = engine::population_matrix(&probes.population.conf, floor)?;
    let mut subgroup_matrices: BTreeMap<String, CalibrationMatrix> = BTreeMap::new();
    let mut subgroup_floored = BTreeMap::new();
    let mut subgroup_null = BTreeMap::new();
    for (value, probe) in &probes.subgroups {
        let built = engine::subgroup_matrix(&probe.conf, floor)?;
        subgroup_matrices.insert(value.clone(), built.matrix);
        subgroup_floored.insert(value.clone(), built.floored);
        subgroup_null.insert(value.clone(), probe.conf.clone());
    }
    let (alpha, final_matrices) =
        engine::finalize_matrices(&population.matrix, &subgroup_matrices, mode)?;
    Ok(ArtifactBuild {
        artifact: CalibrationArtifact {
            class_set: classes.clone(),
            attribute: attribute.to_string(),
            population_null: probes.population.conf.clone(),
            subgroup_null,
            population_matrix: population.matrix,
            subgroup_matrices,
            alpha,
            final_matrices,
            mode,
            provenance,
        },
        population_floored: population.floored,
        subgroup_floored,
    })
}

/// Content hash of the serialized few-shot set, recorded into artifact
/// provenance so probe-time and inference-time exemplars can be compared.
pub fn few_shot_hash(few_shot: &FewShotSet) -> String {
    let json = serde_json::to_vec(few_shot).expect("few-shot set serializes");
    let mut hasher = Sha256::new();
    hasher.update(&json);
    format!("{:x}", hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tl(token: &str, logprob: f64) -> TokenLogprob {
        TokenLogprob {
            token: token.into(),
            logprob,
        }
    }

    #[test]
    fn extract_exponentiates_present_tokens() {
        let top = vec![tl("Negative", -0.22), tl("Positive", -1.61)];
        let out = extract_label_scores(&top, &["Negative", "Positive"], 1e-6).unwrap();
        assert!((out.raw.scores()[0] - (-0.22f64).exp()).abs() < 1e-12);
        assert!((out.raw.scores()[1] - (-1.61f64).exp()).abs() < 1e-12);
        assert_eq!(out.matched, 2);
    }

    #[test]
    fn extract_floors_missing_tokens() {
        let top = vec![tl("Negative", -0.1)];
        let out = extract_label_scores(&top, &["Negative", "Positive"], 1e-6).unwrap();
        assert!((out.raw.scores()[0] - (-0.1f64).exp()).abs() < 1e-12);
        assert_eq!(out.raw.scores()[1], 1e-6);
        assert_eq!(out.matched, 1);
    }

    #[test]
    fn extract_errors_on_empty_logprobs() {
        assert!(matches!(
            extract_label_scores(&[], &["Negative"], 1e-6),
            Err(BackendError::NoLogprobs)
        ));
    }

    #[test]
    fn extract_leading_space_fallback() {
        let top = vec![tl(" Negative", -0.5), tl(" Positive", -1.0)];
        let out = extract_label_scores(&top, &["Negative", "Positive"], 1e-6).unwrap();
        assert_eq!(out.matched, 2);
        assert!((out.raw.scores()[0] - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn extract_prefers_exact_match() {
        // An exact token beats a space-prefixed variant of the same surface.
        let top = vec![tl(" Negative", -5.0), tl("Negative", -0.5), tl("Positive", -1.0)];
        let out = extract_label_scores(&top, &["Negative", "Positive"], 1e-6).unwrap();
        assert!((out.raw.scores()[0] - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn extract_all_floored_is_warning_not_error() {
        let top = vec![tl("Other", -0.1)];
        let out = extract_label_scores(&top, &["Negative", "Positive"], 1e-6).unwrap();
        assert_eq!(out.matched, 0);
        assert_eq!(out.raw.scores(), &[1e-6, 1e-6]);
    }
}
