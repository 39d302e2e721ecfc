//! Synthetic biased-model generator and brute-force metric oracles. The
//! synthetic model realizes prediction bias by construction: its confidence
//! is softmax(log posterior + b0 + b_a), where the posterior comes from a
//! latent signal of configurable strength. This substrate stands in for the
//! non-reproducible live-model experiments and doubles as the verification
//! oracle for the metrics module.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    AttributeSchema, ConfidenceVector, DomainError, Exemplar, PredictionRecord, SubgroupKey,
};
use crate::metrics::{BinningConfig, MetricsError};

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
    #[error("backend failure during synthetic probing: {0}")]
    Backend(String),
}

/// Parametric description of a biased synthetic model.
///
/// `subgroup_bias` is keyed by attribute value; values are assumed globally
/// unique across attributes (the schema constructor does not enforce this,
/// the spec validator does). A record's logit bias is `base_bias` plus the
/// bias of every attribute value it carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub num_classes: usize,
    pub schema: AttributeSchema,
    pub base_bias: Vec<f64>,
    #[serde(default)]
    pub subgroup_bias: BTreeMap<String, Vec<f64>>,
    pub signal_strength: f64,
    pub label_prior: Vec<f64>,
    pub noise_std: f64,
    pub seed: u64,
    /// The attribute null probes condition on; defaults to the attribute
    /// carrying the largest total bias, falling back to the first one.
    #[serde(default)]
    pub probe_attribute: Option<String>,
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<(), SimulatorError> {
        if self.num_classes < 2 {
            return Err(SimulatorError::InvalidSpec("need at least 2 classes".into()));
        }
        if self.base_bias.len() != self.num_classes {
            return Err(SimulatorError::InvalidSpec(format!(
                "base_bias length {} != num_classes {}",
                self.base_bias.len(),
                self.num_classes
            )));
        }
        if self.label_prior.len() != self.num_classes
            || self.label_prior.iter().any(|&p| p <= 0.0 || !p.is_finite())
        {
            return Err(SimulatorError::InvalidSpec(
                "label_prior must be strictly positive with num_classes entries".into(),
            ));
        }
        if !self.signal_strength.is_finite() || self.signal_strength < 0.0 {
            return Err(SimulatorError::InvalidSpec("bad signal_strength".into()));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(SimulatorError::InvalidSpec("bad noise_std".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for attr in self.schema.attributes() {
            for v in &attr.values {
                if !seen.insert(v.clone()) {
                    return Err(SimulatorError::InvalidSpec(format!(
                        "attribute value {v:?} is not unique across attributes"
                    )));
                }
            }
        }
        for (value, bias) in &self.subgroup_bias {
            if bias.len() != self.num_classes {
                return Err(SimulatorError::InvalidSpec(format!(
                    "subgroup bias for {value:?} has wrong length"
                )));
            }
            if !self
                .schema
                .attributes()
                .iter()
                .any(|a| a.values.iter().any(|v| v == value))
            {
                return Err(SimulatorError::InvalidSpec(format!(
                    "subgroup bias key {value:?} is not a schema value"
                )));
            }
        }
        if let Some(attr) = &self.probe_attribute {
            if self.schema.attribute(attr).is_none() {
                return Err(SimulatorError::InvalidSpec(format!(
                    "probe attribute {attr:?} not in schema"
                )));
            }
        }
        Ok(())
    }

    /// Which attribute calibration probing conditions on.
    pub fn resolved_probe_attribute(&self) -> &str {
        if let Some(attr) = &self.probe_attribute {
            return attr;
        }
        let mut best = self.schema.attributes()[0].name.as_str();
        let mut best_mass = -1.0;
        for attr in self.schema.attributes() {
            let mass: f64 = attr
                .values
                .iter()
                .filter_map(|v| self.subgroup_bias.get(v))
                .map(|b| b.iter().map(|x| x.abs()).sum::<f64>())
                .sum();
            if mass > best_mass {
                best_mass = mass;
                best = &attr.name;
            }
        }
        best
    }

    fn bias_for_value(&self, value: &str) -> Vec<f64> {
        self.subgroup_bias
            .get(value)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.num_classes])
    }

    /// The default verification spec: binary task, sex x age, confidence
    /// biased toward class 0 everywhere and extra bias for elders, signal
    /// tuned to roughly 75% Bayes accuracy.
    pub fn default_biased() -> Self {
        use crate::domain::Attribute;
        let schema = AttributeSchema::new(
            vec![
                Attribute {
                    name: "sex".into(),
                    values: vec!["male".into(), "female".into()],
                },
                Attribute {
                    name: "age".into(),
                    values: vec!["young".into(), "elder".into()],
                },
            ],
            vec!["sex".into(), "age".into()],
        )
        .expect("static schema");
        let mut subgroup_bias = BTreeMap::new();
        subgroup_bias.insert("elder".to_string(), vec![0.6, 0.0]);
        Self {
            num_classes: 2,
            schema,
            base_bias: vec![0.3, 0.0],
            subgroup_bias,
            signal_strength: 1.2,
            label_prior: vec![0.5, 0.5],
            noise_std: 0.01,
            seed: 11,
            probe_attribute: None,
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn sample_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (j, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    probs.len() - 1
}

/// A generated labeled dataset plus the latent posteriors behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub records: Vec<PredictionRecord>,
    pub spec: SyntheticTaskSpec,
    pub latent_posteriors: Vec<Vec<f64>>,
}

impl SyntheticDataset {
    /// Few-shot exemplars drawn deterministically from the head of the set.
    pub fn exemplars(&self, n: usize) -> Vec<Exemplar> {
        self.records
            .iter()
            .take(n)
            .enumerate()
            .map(|(i, r)| Exemplar {
                image_ref: latent_image_ref(&self.latent_posteriors[i]),
                attributes: r.attributes.clone(),
                label: r.true_label.expect("generated records are labeled"),
            })
            .collect()
    }
}

/// Encodes a latent posterior as an opaque image handle the mock backend can
/// decode.
pub fn latent_image_ref(posterior: &[f64]) -> String {
    let parts: Vec<String> = posterior.iter().map(|p| format!("{p:.17e}")).collect();
    format!("latent:{}", parts.join(","))
}

/// Decodes an image handle produced by [`latent_image_ref`].
pub fn parse_latent_image_ref(image_ref: &str) -> Option<Vec<f64>> {
    let body = image_ref.strip_prefix("latent:")?;
    let mut out = Vec::new();
    for part in body.split(',') {
        out.push(part.parse().ok()?);
    }
    Some(out)
}

/// The synthetic model's confidence for a query with the given latent
/// posterior and attribute values.
pub fn synthetic_query_response(
    spec: &SyntheticTaskSpec,
    posterior: &[f64],
    attributes: &BTreeMap<String, String>,
) -> ConfidenceVector {
    let mut logits: Vec<f64> = posterior
        .iter()
        .zip(&spec.base_bias)
        .map(|(&p, &b)| p.max(1e-300).ln() + b)
        .collect();
    for value in attributes.values() {
        for (l, b) in logits.iter_mut().zip(spec.bias_for_value(value)) {
            *l += b;
        }
    }
    ConfidenceVector::new(softmax(&logits)).expect("softmax output is normalized")
}

/// Samples `n` records from the synthetic task. Fully determined by
/// (spec, n).
pub fn generate(spec: &SyntheticTaskSpec, n: usize) -> Result<SyntheticDataset, SimulatorError> {
    spec.validate()?;
    if n == 0 {
        return Err(SimulatorError::InvalidSpec("n must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prior = {
        let total: f64 = spec.label_prior.iter().sum();
        spec.label_prior.iter().map(|p| p / total).collect::<Vec<_>>()
    };
    let mut records = Vec::with_capacity(n);
    let mut posteriors = Vec::with_capacity(n);
    for i in 0..n {
        let mut attributes = BTreeMap::new();
        for attr in spec.schema.attributes() {
            let v = attr.values[rng.gen_range(0..attr.values.len())].clone();
            attributes.insert(attr.name.clone(), v);
        }
        // Latent signal: posterior ~ softmax(log prior + s * v), v standard normal.
        let logits: Vec<f64> = prior
            .iter()
            .map(|&p| {
                let v: f64 = StandardNormal.sample(&mut rng);
                p.ln() + spec.signal_strength * v
            })
            .collect();
        let posterior = softmax(&logits);
        let true_label = sample_categorical(&mut rng, &posterior);
        let raw_conf = synthetic_query_response(spec, &posterior, &attributes);
        let (predicted_label, predicted_confidence) = raw_conf.argmax();
        records.push(PredictionRecord {
            id: format!("synth-{i}"),
            attributes,
            true_label: Some(true_label),
            raw_conf,
            calibrated_conf: None,
            predicted_label,
            predicted_confidence,
        });
        posteriors.push(posterior);
    }
    Ok(SyntheticDataset {
        records,
        spec: spec.clone(),
        latent_posteriors: posteriors,
    })
}

/// The synthetic model's answer to a null probe. With a value, the subgroup
/// bias applies; without one, the mean bias over the probed attribute's
/// values stands in for marginalized subgroup membership. Observation noise
/// is seeded by the probe identity so repeated probes are reproducible.
pub fn synthetic_null_response(
    spec: &SyntheticTaskSpec,
    attribute: &str,
    value: Option<&str>,
) -> Result<ConfidenceVector, SimulatorError> {
    let attr = spec
        .schema
        .attribute(attribute)
        .ok_or_else(|| SimulatorError::InvalidSpec(format!("unknown attribute {attribute:?}")))?;
    let bias: Vec<f64> = match value {
        Some(v) => {
            if !attr.values.iter().any(|x| x == v) {
                return Err(SimulatorError::InvalidSpec(format!(
                    "value {v:?} not valid for {attribute:?}"
                )));
            }
            spec.bias_for_value(v)
        }
        None => {
            let mut mean = vec![0.0; spec.num_classes];
            for v in &attr.values {
                for (m, b) in mean.iter_mut().zip(spec.bias_for_value(v)) {
                    *m += b;
                }
            }
            mean.iter().map(|m| m / attr.values.len() as f64).collect()
        }
    };
    let logits: Vec<f64> = spec.base_bias.iter().zip(&bias).map(|(b0, b)| b0 + b).collect();
    let mut probs = softmax(&logits);
    if spec.noise_std > 0.0 {
        // Derive a probe-specific stream so each probe perturbs independently
        // but reproducibly.
        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        use std::hash::{Hash, Hasher};
        attribute.hash(&mut hasher);
        value.hash(&mut hasher);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ hasher.finish());
        for p in probs.iter_mut() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            *p = (*p + spec.noise_std * eps).max(1e-9);
        }
        let sum: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= sum;
        }
    }
    Ok(ConfidenceVector::new(probs)?)
}

// ---------------------------------------------------------------------------
// Brute-force metric oracle. Deliberately shares no code with the metrics
// module: plain double loops, recomputed from scratch per subgroup.
// ---------------------------------------------------------------------------

/// Naive reimplementation of the full metric suite for equivalence testing.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub accuracy: f64,
    pub ece: f64,
    pub mean_eor: Option<f64>,
    pub cceg: BTreeMap<String, f64>,
    pub esce: f64,
    pub subgroup_ece: BTreeMap<String, f64>,
}

fn oracle_ece_of(records: &[&PredictionRecord], num_bins: usize) -> f64 {
    let mut total = 0.0;
    for b in 0..num_bins {
        let mut in_bin: Vec<&&PredictionRecord> = Vec::new();
        for r in records {
            // Truncation-based bin rule, identical at the edges to the
            // estimator under test.
            let idx = ((r.predicted_confidence * num_bins as f64) as usize).min(num_bins - 1);
            if idx == b {
                in_bin.push(r);
            }
        }
        if in_bin.is_empty() {
            continue;
        }
        let mut correct = 0usize;
        let mut conf = 0.0;
        for r in &in_bin {
            if r.true_label == Some(r.predicted_label) {
                correct += 1;
            }
            conf += r.predicted_confidence;
        }
        let acc = correct as f64 / in_bin.len() as f64;
        let mean_conf = conf / in_bin.len() as f64;
        total += (in_bin.len() as f64 / records.len() as f64) * (acc - mean_conf).abs();
    }
    total
}

fn oracle_members<'a>(
    records: &'a [PredictionRecord],
    bindings: &[(String, String)],
) -> Vec<&'a PredictionRecord> {
    let mut out = Vec::new();
    for r in records {
        if r.true_label.is_none() {
            continue;
        }
        let mut ok = true;
        for (name, value) in bindings {
            if r.attributes.get(name) != Some(value) {
                ok = false;
            }
        }
        if ok {
            out.push(r);
        }
    }
    out
}

fn oracle_pairwise_gap(eps: &[f64]) -> Option<f64> {
    if eps.len() < 2 {
        return None;
    }
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..eps.len() {
        for j in 0..eps.len() {
            if i != j {
                total += (eps[i] - eps[j]).abs();
                count += 1;
            }
        }
    }
    Some(total / count as f64)
}

/// Computes every metric with independent double loops. Intended for inputs
/// of at most a few thousand records.
pub fn oracle_metrics(
    records: &[PredictionRecord],
    schema: &AttributeSchema,
    binning: &BinningConfig,
) -> Result<OracleReport, SimulatorError> {
    let labeled: Vec<&PredictionRecord> =
        records.iter().filter(|r| r.true_label.is_some()).collect();
    if labeled.is_empty() {
        return Err(SimulatorError::Metrics(MetricsError::NoRecords));
    }
    let mut correct = 0usize;
    for r in &labeled {
        if r.true_label == Some(r.predicted_label) {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / labeled.len() as f64;
    let ece = oracle_ece_of(&labeled, binning.num_bins);

    let mut cceg = BTreeMap::new();
    let mut subgroup_ece = BTreeMap::new();

    let mut groupings: Vec<(String, Vec<Vec<(String, String)>>)> = Vec::new();
    for attr in schema.attributes() {
        let keys = attr
            .values
            .iter()
            .map(|v| vec![(attr.name.clone(), v.clone())])
            .collect();
        groupings.push((attr.name.clone(), keys));
    }
    let mut inter_keys: Vec<Vec<(String, String)>> = Vec::new();
    if schema.attributes().len() >= 2 {
        let a0 = &schema.attributes()[0];
        let a1 = &schema.attributes()[1];
        for v0 in &a0.values {
            for v1 in &a1.values {
                inter_keys.push(vec![
                    (a0.name.clone(), v0.clone()),
                    (a1.name.clone(), v1.clone()),
                ]);
            }
        }
        groupings.push(("intersection".to_string(), inter_keys.clone()));
    }

    for (label, keys) in &groupings {
        let mut eps = Vec::new();
        for bindings in keys {
            let members = oracle_members(records, bindings);
            if members.is_empty() {
                continue;
            }
            let e = oracle_ece_of(&members, binning.num_bins);
            let key_label = bindings
                .iter()
                .map(|(n, v)| format!("{n}={v}"))
                .collect::<Vec<_>>()
                .join(",");
            subgroup_ece.insert(key_label, e);
            eps.push(e);
        }
        if let Some(gap) = oracle_pairwise_gap(&eps) {
            cceg.insert(label.clone(), gap);
        }
    }

    // ESCE over intersectional subgroups.
    let mut dispersion = 0.0;
    for bindings in &inter_keys {
        let members = oracle_members(records, bindings);
        if members.is_empty() {
            continue;
        }
        dispersion += (oracle_ece_of(&members, binning.num_bins) - ece).abs();
    }
    let esce = ece * (1.0 + dispersion);

    // Mean equalized-odds ratio over the first two attributes, binary only.
    let mean_eor = if labeled.iter().all(|r| r.governing_conf().len() == 2)
        && schema.attributes().len() >= 2
    {
        let mut sum = 0.0;
        let mut ok = true;
        for attr in schema.attributes().iter().take(2) {
            let mut tprs = Vec::new();
            let mut fprs = Vec::new();
            for v in &attr.values {
                let members = oracle_members(records, &[(attr.name.clone(), v.clone())]);
                let mut tp = 0.0;
                let mut pos = 0.0;
                let mut fp = 0.0;
                let mut neg = 0.0;
                for r in &members {
                    if r.true_label == Some(1) {
                        pos += 1.0;
                        if r.predicted_label == 1 {
                            tp += 1.0;
                        }
                    } else {
                        neg += 1.0;
                        if r.predicted_label == 1 {
                            fp += 1.0;
                        }
                    }
                }
                if pos > 0.0 {
                    tprs.push(tp / pos);
                }
                if neg > 0.0 {
                    fprs.push(fp / neg);
                }
            }
            if tprs.len() < 2 || fprs.len() < 2 {
                ok = false;
                break;
            }
            let ratio = |rates: &[f64]| {
                let mut min = f64::INFINITY;
                let mut max = f64::NEG_INFINITY;
                for &r in rates {
                    min = min.min(r);
                    max = max.max(r);
                }
                if max == 0.0 {
                    1.0
                } else {
                    min / max
                }
            };
            sum += ratio(&tprs).min(ratio(&fprs));
        }
        if ok {
            Some(sum / 2.0)
        } else {
            None
        }
    } else {
        None
    };

    Ok(OracleReport {
        accuracy,
        ece,
        mean_eor,
        cceg,
        esce,
        subgroup_ece,
    })
}

// ---------------------------------------------------------------------------
// Experiment runner (ablation comparison).
// ---------------------------------------------------------------------------

/// One experiment mode: the uncalibrated baseline or one calibration mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentMode {
    Vanilla,
    L1Only,
    L2Only,
    Bilevel,
}

impl std::fmt::Display for ExperimentMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExperimentMode::Vanilla => write!(f, "vanilla"),
            ExperimentMode::L1Only => write!(f, "l1_only"),
            ExperimentMode::L2Only => write!(f, "l2_only"),
            ExperimentMode::Bilevel => write!(f, "bilevel"),
        }
    }
}

impl std::str::FromStr for ExperimentMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vanilla" => Ok(Self::Vanilla),
            "l1" | "l1_only" => Ok(Self::L1Only),
            "l2" | "l2_only" => Ok(Self::L2Only),
            "bilevel" => Ok(Self::Bilevel),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// The outcome of one mode: the calibrated records and their metric report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeOutcome {
    pub records: Vec<PredictionRecord>,
    pub report: crate::metrics::MetricReport,
}

/// The full comparison table plus the artifact the calibrated modes shared.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub outcomes: BTreeMap<ExperimentMode, ModeOutcome>,
    pub artifacts: BTreeMap<ExperimentMode, crate::domain::CalibrationArtifact>,
    pub probe_attribute: String,
}

/// Generates the dataset, builds calibration artifacts through the mock
/// backend path, applies every requested mode and evaluates each. The
/// vanilla baseline is always included.
pub fn run_experiment(
    spec: &SyntheticTaskSpec,
    n: usize,
    modes: &[ExperimentMode],
    binning: &BinningConfig,
) -> Result<ExperimentResult, SimulatorError> {
    use crate::backend::mock::MockBackend;
    use crate::backend::{run_probes_with, ProbeRun};
    use crate::domain::{CalibrationMode, FewShotSet};
    use crate::engine;

    let dataset = generate(spec, n)?;
    let classes = default_class_set(spec.num_classes);
    let probe_attribute = spec.resolved_probe_attribute().to_string();
    let few_shot = FewShotSet::new(dataset.exemplars(4), &spec.schema, &classes)
        .map_err(SimulatorError::Domain)?;

    let backend = MockBackend::new(spec.clone());
    let template = crate::backend::prompt::PromptTemplate::synthetic_default();
    let probe_run = ProbeRun {
        few_shot: &few_shot,
        template: &template,
        classes: &classes,
        schema: &spec.schema,
        attribute: &probe_attribute,
    };
    let probes = run_probes_with(&backend, &probe_run, 1)
        .map_err(|e| SimulatorError::Backend(e.to_string()))?;

    let mut outcomes = BTreeMap::new();
    let mut artifacts = BTreeMap::new();

    // Vanilla baseline: raw confidences as-is.
    let vanilla_report =
        crate::metrics::full_report(&dataset.records, &spec.schema, binning)?;
    outcomes.insert(
        ExperimentMode::Vanilla,
        ModeOutcome {
            records: dataset.records.clone(),
            report: vanilla_report,
        },
    );

    for &mode in modes {
        let cal_mode = match mode {
            ExperimentMode::Vanilla => continue,
            ExperimentMode::L1Only => CalibrationMode::L1Only,
            ExperimentMode::L2Only => CalibrationMode::L2Only,
            ExperimentMode::Bilevel => CalibrationMode::Bilevel,
        };
        let built = crate::backend::build_artifact(
            &probes,
            &classes,
            &probe_attribute,
            cal_mode,
            engine::DEFAULT_PROBE_FLOOR,
            crate::domain::Provenance {
                model_id: "mock".into(),
                template_id: template.template_id.clone(),
                few_shot_hash: crate::backend::few_shot_hash(&few_shot),
                timestamp: "1970-01-01T00:00:00Z".into(),
            },
        )
        .map_err(|e| SimulatorError::Backend(e.to_string()))?;
        let artifact = built.artifact;

        let mut records = dataset.records.clone();
        for r in records.iter_mut() {
            let value = r
                .attributes
                .get(&probe_attribute)
                .ok_or_else(|| SimulatorError::InvalidSpec("record misses probe attribute".into()))?;
            let c = artifact
                .final_matrices
                .get(value)
                .ok_or_else(|| SimulatorError::InvalidSpec(format!("no matrix for {value:?}")))?;
            let calibrated = engine::apply_calibration(c, &r.raw_conf)?;
            let (label, conf) = engine::predict(&calibrated);
            r.calibrated_conf = Some(calibrated);
            r.predicted_label = label;
            r.predicted_confidence = conf;
        }
        let report = crate::metrics::full_report(&records, &spec.schema, binning)?;
        outcomes.insert(mode, ModeOutcome { records, report });
        artifacts.insert(mode, artifact);
    }

    Ok(ExperimentResult {
        outcomes,
        artifacts,
        probe_attribute,
    })
}

/// Class set used for synthetic tasks: class k surfaces as token "Ck".
pub fn default_class_set(num_classes: usize) -> crate::domain::ClassLabelSet {
    let pairs: Vec<(String, String)> = (0..num_classes)
        .map(|k| (format!("class{k}"), format!("C{k}")))
        .collect();
    crate::domain::ClassLabelSet::new(
        pairs
            .into_iter()
            .map(|(n, t)| crate::domain::ClassLabel {
                display_name: n,
                label_token: t,
            })
            .collect(),
    )
    .expect("at least 2 synthetic classes")
}

/// Selects records matching a subgroup key; exposed for diagnostics.
pub fn subgroup_records<'a>(
    records: &'a [PredictionRecord],
    key: &SubgroupKey,
) -> Vec<&'a PredictionRecord> {
    records.iter().filter(|r| key.matches(&r.attributes)).collect()
}
