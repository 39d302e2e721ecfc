//! Evaluation metrics: accuracy, binned expected calibration error, the
//! subgroup calibration-error gap, the mean equalized-odds ratio and the
//! equity-scaled calibration error, plus the full per-subgroup report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{intersect, AttributeSchema, DomainError, PredictionRecord, SubgroupKey};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no labeled records")]
    NoRecords,
    #[error("subgroup {0:?} is empty; its calibration error is undefined")]
    EmptySubgroup(String),
    #[error("fewer than 2 non-empty subgroups under {0:?}")]
    TooFewSubgroups(String),
    #[error("equalized odds ratio requires a binary task, got {0} classes")]
    NonBinaryTask(usize),
    #[error("attribute {0:?}: fewer than 2 subgroups with defined {1} rates")]
    UndefinedRates(String, &'static str),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Equal-width binning over [0, 1] for the calibration-error estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinningConfig {
    pub num_bins: usize,
}

impl Default for BinningConfig {
    fn default() -> Self {
        Self { num_bins: 10 }
    }
}

impl BinningConfig {
    pub fn new(num_bins: usize) -> Self {
        assert!(num_bins >= 1, "need at least one bin");
        Self { num_bins }
    }

    fn bin_of(&self, confidence: f64) -> usize {
        // Confidence 1.0 lands in the last bin.
        ((confidence * self.num_bins as f64) as usize).min(self.num_bins - 1)
    }
}

/// One reliability-diagram bin of the overall population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

/// Everything the evaluator computes, unscaled. Rendering (including the
/// x100 display convention) happens elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub ece: f64,
    pub mean_eor: f64,
    /// Keyed by attribute name, plus "intersection" for the first two
    /// attributes' cross product.
    pub cceg: BTreeMap<String, f64>,
    /// ESCE under the adopted definition (the source names the metric but
    /// gives no formula): overall ECE scaled by one plus the summed absolute
    /// subgroup deviations over intersectional subgroups.
    pub esce: f64,
    pub subgroup_ece: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, usize>,
    /// Metrics that could not be computed, keyed like `cceg`, with the reason.
    pub missing: BTreeMap<String, String>,
    /// Records dropped because they carry no true label.
    pub skipped_unlabeled: usize,
    pub bins: Vec<BinStat>,
}

fn labeled(records: &[PredictionRecord]) -> Vec<&PredictionRecord> {
    records.iter().filter(|r| r.true_label.is_some()).collect()
}

fn binned_ece(records: &[&PredictionRecord], binning: &BinningConfig) -> f64 {
    let n = records.len();
    let mut count = vec![0usize; binning.num_bins];
    let mut conf_sum = vec![0.0f64; binning.num_bins];
    let mut correct = vec![0usize; binning.num_bins];
    for r in records {
        let b = binning.bin_of(r.predicted_confidence);
        count[b] += 1;
        conf_sum[b] += r.predicted_confidence;
        if r.true_label == Some(r.predicted_label) {
            correct[b] += 1;
        }
    }
    let mut ece = 0.0;
    for b in 0..binning.num_bins {
        if count[b] == 0 {
            continue;
        }
        let acc = correct[b] as f64 / count[b] as f64;
        let conf = conf_sum[b] / count[b] as f64;
        ece += count[b] as f64 / n as f64 * (acc - conf).abs();
    }
    ece
}

/// Binned calibration error of the records matching `key`. Errors on an
/// empty subgroup rather than reporting a silent zero.
pub fn subgroup_ece(
    records: &[PredictionRecord],
    key: &SubgroupKey,
    binning: &BinningConfig,
) -> Result<f64, MetricsError> {
    let members: Vec<&PredictionRecord> = labeled(records)
        .into_iter()
        .filter(|r| key.matches(&r.attributes))
        .collect();
    if members.is_empty() {
        return Err(MetricsError::EmptySubgroup(key.label()));
    }
    Ok(binned_ece(&members, binning))
}

/// Overall binned ECE of all labeled records.
pub fn overall_ece(
    records: &[PredictionRecord],
    binning: &BinningConfig,
) -> Result<f64, MetricsError> {
    let members = labeled(records);
    if members.is_empty() {
        return Err(MetricsError::NoRecords);
    }
    Ok(binned_ece(&members, binning))
}

/// Mean pairwise absolute difference of subgroup calibration errors over the
/// given subgroup keys. Empty subgroups are skipped; at least two non-empty
/// subgroups are required.
pub fn cceg(
    records: &[PredictionRecord],
    keys: &[SubgroupKey],
    binning: &BinningConfig,
    grouping_label: &str,
) -> Result<f64, MetricsError> {
    let mut eps = Vec::new();
    for key in keys {
        match subgroup_ece(records, key, binning) {
            Ok(e) => eps.push(e),
            Err(MetricsError::EmptySubgroup(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    if eps.len() < 2 {
        return Err(MetricsError::TooFewSubgroups(grouping_label.to_string()));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..eps.len() {
        for j in (i + 1)..eps.len() {
            total += (eps[i] - eps[j]).abs();
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Fraction of labeled records predicted correctly.
pub fn accuracy(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    let members = labeled(records);
    if members.is_empty() {
        return Err(MetricsError::NoRecords);
    }
    let correct = members
        .iter()
        .filter(|r| r.true_label == Some(r.predicted_label))
        .count();
    Ok(correct as f64 / members.len() as f64)
}

fn rate_ratio(rates: &[f64]) -> f64 {
    let max = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    // No disparity when nobody triggers the rate.
    if max == 0.0 {
        1.0
    } else {
        min / max
    }
}

/// Mean equalized-odds ratio across the listed attributes. Binary tasks only;
/// the positive class is class id 1. Per attribute, the EOR is the smaller of
/// the min/max ratios of subgroup TPRs and FPRs.
pub fn mean_eor(
    records: &[PredictionRecord],
    schema: &AttributeSchema,
    attributes: &[&str],
) -> Result<f64, MetricsError> {
    let members = labeled(records);
    if members.is_empty() {
        return Err(MetricsError::NoRecords);
    }
    if let Some(r) = members.iter().find(|r| r.governing_conf().len() != 2) {
        return Err(MetricsError::NonBinaryTask(r.governing_conf().len()));
    }
    let mut sum = 0.0;
    for &attr_name in attributes {
        let attr = schema
            .attribute(attr_name)
            .ok_or_else(|| DomainError::UnknownAttribute(attr_name.to_string()))?;
        let mut tprs = Vec::new();
        let mut fprs = Vec::new();
        for value in &attr.values {
            let subgroup: Vec<_> = members
                .iter()
                .filter(|r| r.attributes.get(attr_name).map(String::as_str) == Some(value))
                .collect();
            if subgroup.is_empty() {
                continue;
            }
            let positives = subgroup.iter().filter(|r| r.true_label == Some(1)).count();
            let negatives = subgroup.len() - positives;
            let tp = subgroup
                .iter()
                .filter(|r| r.true_label == Some(1) && r.predicted_label == 1)
                .count();
            let fp = subgroup
                .iter()
                .filter(|r| r.true_label == Some(0) && r.predicted_label == 1)
                .count();
            if positives > 0 {
                tprs.push(tp as f64 / positives as f64);
            }
            if negatives > 0 {
                fprs.push(fp as f64 / negatives as f64);
            }
        }
        if tprs.len() < 2 {
            return Err(MetricsError::UndefinedRates(attr_name.to_string(), "TPR"));
        }
        if fprs.len() < 2 {
            return Err(MetricsError::UndefinedRates(attr_name.to_string(), "FPR"));
        }
        sum += rate_ratio(&tprs).min(rate_ratio(&fprs));
    }
    Ok(sum / attributes.len() as f64)
}

/// Equity-scaled calibration error (adopted definition): overall ECE times
/// one plus the summed absolute deviation of each non-empty intersectional
/// subgroup's ECE from the overall ECE.
pub fn esce(
    records: &[PredictionRecord],
    intersectional_keys: &[SubgroupKey],
    binning: &BinningConfig,
) -> Result<f64, MetricsError> {
    let overall = overall_ece(records, binning)?;
    let mut dispersion = 0.0;
    for key in intersectional_keys {
        match subgroup_ece(records, key, binning) {
            Ok(e) => dispersion += (e - overall).abs(),
            Err(MetricsError::EmptySubgroup(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(overall * (1.0 + dispersion))
}

fn overall_bins(records: &[&PredictionRecord], binning: &BinningConfig) -> Vec<BinStat> {
    let mut count = vec![0usize; binning.num_bins];
    let mut conf_sum = vec![0.0f64; binning.num_bins];
    let mut correct = vec![0usize; binning.num_bins];
    for r in records {
        let b = binning.bin_of(r.predicted_confidence);
        count[b] += 1;
        conf_sum[b] += r.predicted_confidence;
        if r.true_label == Some(r.predicted_label) {
            correct[b] += 1;
        }
    }
    (0..binning.num_bins)
        .map(|b| BinStat {
            lower: b as f64 / binning.num_bins as f64,
            upper: (b + 1) as f64 / binning.num_bins as f64,
            count: count[b],
            mean_confidence: if count[b] == 0 {
                0.0
            } else {
                conf_sum[b] / count[b] as f64
            },
            accuracy: if count[b] == 0 {
                0.0
            } else {
                correct[b] as f64 / count[b] as f64
            },
        })
        .collect()
}

/// Computes every metric over the labeled records. CCEG is reported per
/// schema attribute plus the intersection of the first two attributes;
/// metrics that cannot be computed land in `missing` with the reason.
pub fn full_report(
    records: &[PredictionRecord],
    schema: &AttributeSchema,
    binning: &BinningConfig,
) -> Result<MetricReport, MetricsError> {
    let members = labeled(records);
    if members.is_empty() {
        return Err(MetricsError::NoRecords);
    }
    let skipped_unlabeled = records.len() - members.len();
    if skipped_unlabeled > 0 {
        log::warn!("{skipped_unlabeled} records have no true label and are excluded from metrics");
    }

    let accuracy = accuracy(records)?;
    let ece = overall_ece(records, binning)?;

    let mut cceg_map = BTreeMap::new();
    let mut missing = BTreeMap::new();
    let mut subgroup_map = BTreeMap::new();
    let mut counts = BTreeMap::new();

    let mut groupings: Vec<(String, Vec<SubgroupKey>)> = Vec::new();
    for attr in schema.attributes() {
        groupings.push((attr.name.clone(), intersect(schema, &[&attr.name])?));
    }
    let attr_names: Vec<&str> = schema.attributes().iter().map(|a| a.name.as_str()).collect();
    let inter_keys = if attr_names.len() >= 2 {
        let keys = intersect(schema, &attr_names[..2])?;
        groupings.push(("intersection".to_string(), keys.clone()));
        keys
    } else {
        Vec::new()
    };

    for (label, keys) in &groupings {
        match cceg(records, keys, binning, label) {
            Ok(v) => {
                cceg_map.insert(label.clone(), v);
            }
            Err(e) => {
                missing.insert(format!("cceg:{label}"), e.to_string());
            }
        }
        for key in keys {
            let count = members.iter().filter(|r| key.matches(&r.attributes)).count();
            counts.insert(key.label(), count);
            match subgroup_ece(records, key, binning) {
                Ok(e) => {
                    subgroup_map.insert(key.label(), e);
                }
                Err(MetricsError::EmptySubgroup(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }

    let eor_attrs: Vec<&str> = attr_names.iter().take(2).cloned().collect();
    let mean_eor = match mean_eor(records, schema, &eor_attrs) {
        Ok(v) => v,
        Err(e) => {
            missing.insert("mean_eor".to_string(), e.to_string());
            f64::NAN
        }
    };

    let esce = if inter_keys.is_empty() {
        missing.insert("esce".to_string(), "needs two attributes".to_string());
        f64::NAN
    } else {
        esce(records, &inter_keys, binning)?
    };

    Ok(MetricReport {
        accuracy,
        ece,
        mean_eor,
        cceg: cceg_map,
        esce,
        subgroup_ece: subgroup_map,
        counts,
        missing,
        skipped_unlabeled,
        bins: overall_bins(&members, binning),
    })
}
