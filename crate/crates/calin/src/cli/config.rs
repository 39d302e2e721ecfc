//! Run configuration: a single TOML document naming the class set, schema,
//! prompt template, backend selection and calibration/evaluation knobs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::prompt::PromptTemplate;
use crate::backend::BackendConfig;
use crate::domain::{
    Attribute, AttributeSchema, CalibrationMode, ClassLabel, ClassLabelSet,
};
use crate::engine::DEFAULT_PROBE_FLOOR;
use crate::metrics::BinningConfig;

use super::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub attributes: Vec<Attribute>,
    #[serde(default)]
    pub prompt_attributes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationSection {
    /// The attribute null probes condition on.
    pub attribute: String,
    #[serde(default = "default_mode")]
    pub mode: CalibrationMode,
    #[serde(default = "default_floor")]
    pub floor: f64,
    #[serde(default = "default_repeats")]
    pub probe_repeats: usize,
}

fn default_mode() -> CalibrationMode {
    CalibrationMode::Bilevel
}
fn default_floor() -> f64 {
    DEFAULT_PROBE_FLOOR
}
fn default_repeats() -> usize {
    1
}

/// Which backend answers probe and query requests.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSelector {
    /// Deterministic synthetic backend; `spec` points at a task-spec TOML.
    Mock { spec: PathBuf },
    /// Live chat-completions endpoint.
    Http(BackendConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub classes: Vec<ClassLabel>,
    pub schema: SchemaConfig,
    #[serde(default = "PromptTemplate::synthetic_default")]
    pub template: PromptTemplate,
    pub calibration: CalibrationSection,
    #[serde(default)]
    pub binning: BinningConfig,
    pub backend: BackendSelector,
    /// JSON file holding the few-shot exemplar list.
    #[serde(default)]
    pub few_shot_manifest: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub scale_x100: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Environment(format!("cannot read config {path:?}: {e}")))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("bad config {path:?}: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.class_set()?;
        let schema = self.attribute_schema()?;
        if schema.attribute(&self.calibration.attribute).is_none() {
            return Err(CliError::Validation(format!(
                "calibration attribute {:?} is not in the schema",
                self.calibration.attribute
            )));
        }
        if self.calibration.floor <= 0.0 || !self.calibration.floor.is_finite() {
            return Err(CliError::Validation("probe floor must be positive".into()));
        }
        if self.calibration.probe_repeats < 1 {
            return Err(CliError::Validation("probe_repeats must be at least 1".into()));
        }
        Ok(())
    }

    pub fn class_set(&self) -> Result<ClassLabelSet, CliError> {
        ClassLabelSet::new(self.classes.clone())
            .map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn attribute_schema(&self) -> Result<AttributeSchema, CliError> {
        AttributeSchema::new(
            self.schema.attributes.clone(),
            self.schema.prompt_attributes.clone(),
        )
        .map_err(|e| CliError::Validation(e.to_string()))
    }
}
