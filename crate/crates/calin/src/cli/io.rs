//! File formats: line-delimited record logs, artifact and report documents,
//! few-shot manifests. All writes go through write-temp-then-rename.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{
    CalibrationArtifact, ClassLabelSet, ConfidenceVector, Exemplar, PredictionRecord,
};
use crate::metrics::MetricReport;

use super::CliError;

/// One prediction record as serialized in the line-delimited log. The
/// `classes` array pins the class order the confidence vectors refer to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordLogLine {
    pub id: String,
    pub attributes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_label: Option<usize>,
    pub classes: Vec<String>,
    pub raw_conf: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrated_conf: Option<Vec<f64>>,
    pub predicted_label: usize,
    pub predicted_confidence: f64,
}

impl RecordLogLine {
    pub fn from_record(record: &PredictionRecord, classes: &ClassLabelSet) -> Self {
        Self {
            id: record.id.clone(),
            attributes: record.attributes.clone(),
            true_label: record.true_label,
            classes: classes
                .display_names()
                .iter()
                .map(|s| s.to_string())
                .collect(),
            raw_conf: record.raw_conf.probs().to_vec(),
            calibrated_conf: record
                .calibrated_conf
                .as_ref()
                .map(|c| c.probs().to_vec()),
            predicted_label: record.predicted_label,
            predicted_confidence: record.predicted_confidence,
        }
    }

    pub fn into_record(self, classes: &ClassLabelSet) -> Result<PredictionRecord, CliError> {
        let expected: Vec<String> = classes
            .display_names()
            .iter()
            .map(|s| s.to_string())
            .collect();
        if self.classes != expected {
            return Err(CliError::Validation(format!(
                "record {:?}: classes {:?} do not match the configured class set {:?}",
                self.id, self.classes, expected
            )));
        }
        let raw_conf = ConfidenceVector::new(self.raw_conf)
            .map_err(|e| CliError::Validation(format!("record {:?}: raw_conf: {e}", self.id)))?;
        let calibrated_conf = match self.calibrated_conf {
            Some(c) => Some(ConfidenceVector::new(c).map_err(|e| {
                CliError::Validation(format!("record {:?}: calibrated_conf: {e}", self.id))
            })?),
            None => None,
        };
        Ok(PredictionRecord {
            id: self.id,
            attributes: self.attributes,
            true_label: self.true_label,
            raw_conf,
            calibrated_conf,
            predicted_label: self.predicted_label,
            predicted_confidence: self.predicted_confidence,
        })
    }
}

/// Atomic write: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Environment(format!("cannot create {dir:?}: {e}")))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into()),
        std::process::id()
    ));
    {
        let mut file = std::fs::File::create(&tmp)
            .map_err(|e| CliError::Environment(format!("cannot create {tmp:?}: {e}")))?;
        file.write_all(contents)
            .map_err(|e| CliError::Environment(format!("cannot write {tmp:?}: {e}")))?;
    }
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::Environment(format!("cannot rename into {path:?}: {e}")))
}

pub fn read_records(
    path: &Path,
    classes: &ClassLabelSet,
) -> Result<Vec<PredictionRecord>, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Environment(format!("cannot read {path:?}: {e}")))?;
    let mut records = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::Environment(format!("read error: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecordLogLine = serde_json::from_str(&line).map_err(|e| {
            CliError::Validation(format!("{path:?} line {}: {e}", i + 1))
        })?;
        records.push(parsed.into_record(classes)?);
    }
    Ok(records)
}

pub fn write_records(
    path: &Path,
    records: &[PredictionRecord],
    classes: &ClassLabelSet,
) -> Result<(), CliError> {
    let mut out = Vec::new();
    for record in records {
        let line = RecordLogLine::from_record(record, classes);
        serde_json::to_writer(&mut out, &line)
            .map_err(|e| CliError::Environment(format!("serialize failure: {e}")))?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

pub fn read_artifact(path: &Path) -> Result<CalibrationArtifact, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Environment(format!("cannot read artifact {path:?}: {e}")))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("bad artifact {path:?}: {e}")))
}

pub fn write_artifact(path: &Path, artifact: &CalibrationArtifact) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(artifact)
        .map_err(|e| CliError::Environment(format!("serialize failure: {e}")))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn write_report(path: &Path, report: &MetricReport) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| CliError::Environment(format!("serialize failure: {e}")))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_report(path: &Path) -> Result<MetricReport, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Environment(format!("cannot read report {path:?}: {e}")))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("bad report {path:?}: {e}")))
}

pub fn read_few_shot_manifest(path: &Path) -> Result<Vec<Exemplar>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Environment(format!("cannot read manifest {path:?}: {e}")))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("bad few-shot manifest {path:?}: {e}")))
}
