//! Weighted aggregation of metric results and canonical report encoding.
//!
//! Every float in a report is rounded to 12 significant digits when the
//! report is built, so the encoded form is stable and decodes back to an
//! identical value.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{
    Evidence, MetricId, MetricResult, QualityReport, ReportWeights, Score, SensorBreakdown,
};

pub const TOOL_VERSION: &str = concat!("iot-dq ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("every metric is inapplicable; nothing to aggregate")]
    NothingApplicable,
    #[error("every applicable metric has zero weight")]
    ZeroApplicableWeight,
    #[error("weight for {0} must be non-negative and finite, got {1}")]
    BadWeight(MetricId, f64),
}

/// Rounds to 12 significant digits.
pub fn canonical_f64(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

fn canonical_score(s: Score) -> Score {
    match s {
        Score::Value(v) => Score::Value(canonical_f64(v)),
        Score::Inapplicable => Score::Inapplicable,
    }
}

fn canonicalize_result(r: &mut MetricResult) {
    r.score = canonical_score(r.score);
    match &mut r.evidence {
        Evidence::Regularity {
            numerator_sum,
            denominator_sum,
            ..
        } => {
            *numerator_sum = canonical_f64(*numerator_sum);
            *denominator_sum = canonical_f64(*denominator_sum);
        }
        Evidence::Outliers { samples, .. } => {
            for s in samples {
                s.iat = canonical_f64(s.iat);
                s.z = canonical_f64(s.z);
            }
        }
        Evidence::Duplicates { .. } | Evidence::Schema { .. } | Evidence::None => {}
    }
}

fn canonicalize_sensor(b: &mut SensorBreakdown) {
    if let Some(m) = &mut b.model {
        m.mode = canonical_f64(m.mode);
        m.quantization = canonical_f64(m.quantization);
        m.mad = canonical_f64(m.mad);
        m.fallback_mean_ad = m.fallback_mean_ad.map(canonical_f64);
    }
    b.m1_numerator = canonical_f64(b.m1_numerator);
    b.m1_denominator = canonical_f64(b.m1_denominator);
    b.m1_score = canonical_score(b.m1_score);
    b.m2_score = canonical_score(b.m2_score);
}

impl QualityReport {
    /// Rounds every float to its canonical 12-significant-digit value.
    pub fn canonicalize(&mut self) {
        self.per_metric.iter_mut().for_each(canonicalize_result);
        if let Some(ps) = &mut self.per_sensor {
            ps.iter_mut().for_each(canonicalize_sensor);
        }
        for w in self
            .weights
            .raw
            .values_mut()
            .chain(self.weights.normalized.values_mut())
        {
            *w = canonical_f64(*w);
        }
        self.aggregate_score = canonical_f64(self.aggregate_score);
    }
}

/// Weighted mean of `(score, weight)` pairs, before canonical rounding.
pub fn weighted_score(pairs: &[(f64, f64)]) -> Result<f64, AggregateError> {
    if pairs.is_empty() {
        return Err(AggregateError::NothingApplicable);
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    if total <= 0.0 {
        return Err(AggregateError::ZeroApplicableWeight);
    }
    Ok(pairs.iter().map(|&(s, w)| w / total * s).sum())
}

/// Weighted mean of the applicable metric scores. Weights are restricted to
/// applicable metrics and renormalized to sum to one.
pub fn aggregate(
    results: Vec<MetricResult>,
    weights: &BTreeMap<MetricId, f64>,
) -> Result<QualityReport, AggregateError> {
    for (&m, &w) in weights {
        if !(w.is_finite() && w >= 0.0) {
            return Err(AggregateError::BadWeight(m, w));
        }
    }
    let mut per_metric = results;
    per_metric.sort_by_key(|r| r.metric_id);
    per_metric.iter_mut().for_each(canonicalize_result);

    let applicable: Vec<(MetricId, f64)> = per_metric
        .iter()
        .filter_map(|r| r.score.value().map(|s| (r.metric_id, s)))
        .collect();
    if applicable.is_empty() {
        return Err(AggregateError::NothingApplicable);
    }
    let weight_of = |m: MetricId| weights.get(&m).copied().unwrap_or(0.0);
    let pairs: Vec<(f64, f64)> = applicable.iter().map(|&(m, s)| (s, weight_of(m))).collect();
    let aggregate_score = weighted_score(&pairs)?;
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let normalized: BTreeMap<MetricId, f64> = applicable
        .iter()
        .map(|&(m, _)| (m, canonical_f64(weight_of(m) / total)))
        .collect();

    let raw = per_metric
        .iter()
        .map(|r| (r.metric_id, canonical_f64(weight_of(r.metric_id))))
        .collect();

    Ok(QualityReport {
        tool_version: TOOL_VERSION.to_string(),
        dataset_fingerprint: String::new(),
        created_at: String::new(),
        per_metric,
        per_sensor: None,
        weights: ReportWeights { raw, normalized },
        aggregate_score: canonical_f64(aggregate_score),
    })
}

/// Canonical JSON encoding: fixed key order, 12-significant-digit floats,
/// two-space indentation and a trailing newline.
pub fn serialize_report(report: &QualityReport) -> Vec<u8> {
    let mut r = report.clone();
    r.canonicalize();
    let mut out = serde_json::to_vec_pretty(&r).expect("report serializes");
    out.push(b'\n');
    out
}

pub fn deserialize_report(bytes: &[u8]) -> Result<QualityReport, serde_json::Error> {
    serde_json::from_slice(bytes)
}

/// Hex SHA-256 of the canonical encoding.
pub fn report_digest(report: &QualityReport) -> String {
    hex::encode(Sha256::digest(serialize_report(report)))
}
