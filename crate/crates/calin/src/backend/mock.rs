//! Deterministic mock backend driven by a synthetic task spec. Null probes
//! answer from the spec's bias structure; queries decode the latent
//! posterior baked into the image handle. Identical (seed, spec, prompt)
//! always yields identical scores.

use crate::simulator::{
    parse_latent_image_ref, synthetic_null_response, synthetic_query_response, SyntheticTaskSpec,
};

use super::{Backend, BackendError, CompletionRequest, RequestKind, TokenLogprob};

pub struct MockBackend {
    spec: SyntheticTaskSpec,
}

impl MockBackend {
    pub fn new(spec: SyntheticTaskSpec) -> Self {
        Self { spec }
    }

    pub fn spec(&self) -> &SyntheticTaskSpec {
        &self.spec
    }
}

impl Backend for MockBackend {
    fn model_id(&self) -> &str {
        "mock"
    }

    fn top_logprobs(&self, request: &CompletionRequest) -> Result<Vec<TokenLogprob>, BackendError> {
        let conf = match &request.kind {
            RequestKind::NullPopulation => synthetic_null_response(
                &self.spec,
                self.spec.resolved_probe_attribute(),
                None,
            )
            .map_err(|e| BackendError::BadResponse(e.to_string()))?,
            RequestKind::NullSubgroup { attribute, value } => {
                synthetic_null_response(&self.spec, attribute, Some(value))
                    .map_err(|e| BackendError::BadResponse(e.to_string()))?
            }
            RequestKind::Query {
                image_ref,
                attributes,
                ..
            } => {
                let posterior = parse_latent_image_ref(image_ref).ok_or_else(|| {
                    BackendError::ImageRead(
                        image_ref.clone(),
                        "mock backend expects latent image handles".into(),
                    )
                })?;
                synthetic_query_response(&self.spec, &posterior, attributes)
            }
        };
        if conf.len() != request.label_tokens.len() {
            return Err(BackendError::BadResponse(format!(
                "spec has {} classes but {} label tokens were requested",
                conf.len(),
                request.label_tokens.len()
            )));
        }
        Ok(request
            .label_tokens
            .iter()
            .zip(conf.probs())
            .map(|(token, &p)| TokenLogprob {
                token: token.clone(),
                logprob: p.max(1e-300).ln(),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{run_probes_with, run_query_with, ProbeRun};
    use crate::backend::prompt::PromptTemplate;
    use crate::domain::FewShotSet;
    use crate::simulator::{generate, default_class_set, latent_image_ref};

    fn setup() -> (SyntheticTaskSpec, FewShotSet) {
        let spec = SyntheticTaskSpec::default_biased();
        let data = generate(&spec, 8).unwrap();
        let classes = default_class_set(2);
        let few_shot = FewShotSet::new(data.exemplars(4), &spec.schema, &classes).unwrap();
        (spec, few_shot)
    }

    #[test]
    fn probes_are_deterministic() {
        let (spec, few_shot) = setup();
        let classes = default_class_set(2);
        let template = PromptTemplate::synthetic_default();
        let run = ProbeRun {
            few_shot: &few_shot,
            template: &template,
            classes: &classes,
            schema: &spec.schema,
            attribute: "age",
        };
        let backend = MockBackend::new(spec.clone());
        let a = run_probes_with(&backend, &run, 1).unwrap();
        let b = run_probes_with(&backend, &run, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.subgroups.len(), 2);
    }

    #[test]
    fn zero_bias_spec_probes_uniform() {
        let (_, few_shot) = setup();
        let mut spec = SyntheticTaskSpec::default_biased();
        spec.base_bias = vec![0.0, 0.0];
        spec.subgroup_bias.clear();
        spec.noise_std = 0.0;
        let classes = default_class_set(2);
        let template = PromptTemplate::synthetic_default();
        let backend = MockBackend::new(spec);
        let run = ProbeRun {
            few_shot: &few_shot,
            template: &template,
            classes: &classes,
            schema: &backend.spec().schema,
            attribute: "age",
        };
        let probes = run_probes_with(&backend, &run, 1).unwrap();
        assert!((probes.population.conf.probs()[0] - 0.5).abs() < 1e-9);
        for probe in probes.subgroups.values() {
            assert!((probe.conf.probs()[0] - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn subgroup_probe_reflects_logit_bias() {
        let (_, few_shot) = setup();
        let mut spec = SyntheticTaskSpec::default_biased();
        spec.base_bias = vec![0.0, 0.0];
        spec.subgroup_bias.clear();
        spec.subgroup_bias.insert("elder".into(), vec![0.4, 0.0]);
        spec.noise_std = 0.0;
        let classes = default_class_set(2);
        let template = PromptTemplate::synthetic_default();
        let backend = MockBackend::new(spec);
        let run = ProbeRun {
            few_shot: &few_shot,
            template: &template,
            classes: &classes,
            schema: &backend.spec().schema,
            attribute: "age",
        };
        let probes = run_probes_with(&backend, &run, 1).unwrap();
        // subgroup elder = softmax(0.4, 0); population = softmax(0.2, 0).
        let expected = (0.4f64).exp() / ((0.4f64).exp() + 1.0);
        assert!((probes.subgroups["elder"].conf.probs()[0] - expected).abs() < 1e-9);
        let expected_pop = (0.2f64).exp() / ((0.2f64).exp() + 1.0);
        assert!((probes.population.conf.probs()[0] - expected_pop).abs() < 1e-9);
    }

    #[test]
    fn query_decodes_latent_posterior() {
        let (spec, few_shot) = setup();
        let mut clean = spec.clone();
        clean.base_bias = vec![0.0, 0.0];
        clean.subgroup_bias.clear();
        let classes = default_class_set(2);
        let template = PromptTemplate::synthetic_default();
        let backend = MockBackend::new(clean);
        let run = ProbeRun {
            few_shot: &few_shot,
            template: &template,
            classes: &classes,
            schema: &backend.spec().schema,
            attribute: "age",
        };
        let posterior = vec![0.8, 0.2];
        let image = latent_image_ref(&posterior);
        let mut attrs = std::collections::BTreeMap::new();
        attrs.insert("sex".to_string(), "male".to_string());
        attrs.insert("age".to_string(), "young".to_string());
        let result = run_query_with(&backend, &run, "q0", &image, &attrs).unwrap();
        // With no bias the model echoes the posterior.
        assert!((result.conf.probs()[0] - 0.8).abs() < 1e-9);
    }

    #[test]
    fn query_requires_image() {
        let (spec, few_shot) = setup();
        let classes = default_class_set(2);
        let template = PromptTemplate::synthetic_default();
        let backend = MockBackend::new(spec);
        let run = ProbeRun {
            few_shot: &few_shot,
            template: &template,
            classes: &classes,
            schema: &backend.spec().schema,
            attribute: "age",
        };
        let attrs = std::collections::BTreeMap::new();
        let err = run_query_with(&backend, &run, "q0", "", &attrs).unwrap_err();
        assert!(matches!(err, BackendError::MissingImage));
    }
}
