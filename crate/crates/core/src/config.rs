use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::MetricId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeScope {
    /// One IAT model per sensor; per-IAT contributions pooled before the final ratio.
    #[default]
    PerSensor,
    /// One IAT model over the IATs of every sensor.
    Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DuplicateKey {
    #[default]
    IdTimestamp,
    FullPacket,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatChecks {
    #[default]
    TypesOnly,
    Full,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{0} must be positive and finite, got {1}")]
    NotPositive(&'static str, f64),
    #[error("weight for {0} must be non-negative and finite, got {1}")]
    BadWeight(MetricId, f64),
    #[error("at least one metric weight must be positive")]
    AllWeightsZero,
    #[error("{0} field name must not be empty")]
    EmptyField(&'static str),
    #[error("invalid config document: {0}")]
    Parse(String),
}

/// Assessor-supplied assessment configuration for a data domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssessmentConfig {
    /// Broad data domain the configuration targets, e.g. "environment".
    pub domain: Option<String>,
    pub timestamp_field: String,
    pub sensor_id_field: String,
    pub weights: BTreeMap<MetricId, f64>,
    pub rae_crossover: f64,
    pub z_cutoff: f64,
    pub quantization_seconds: f64,
    pub mode_scope: ModeScope,
    pub duplicate_key: DuplicateKey,
    pub format_checks: FormatChecks,
    /// Report timestamp. When unset, the latest packet timestamp is used so
    /// that identical inputs produce identical reports.
    pub created_at: Option<String>,
}

impl Default for AssessmentConfig {
    fn default() -> Self {
        Self {
            domain: None,
            timestamp_field: "timestamp".into(),
            sensor_id_field: "sensor_id".into(),
            weights: MetricId::ALL.into_iter().map(|m| (m, 1.0)).collect(),
            rae_crossover: 0.5,
            z_cutoff: 3.5,
            quantization_seconds: 1.0,
            mode_scope: ModeScope::default(),
            duplicate_key: DuplicateKey::default(),
            format_checks: FormatChecks::default(),
            created_at: None,
        }
    }
}

impl AssessmentConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, ConfigError> {
        let cfg: Self =
            serde_json::from_slice(bytes).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("rae_crossover", self.rae_crossover),
            ("z_cutoff", self.z_cutoff),
            ("quantization_seconds", self.quantization_seconds),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::NotPositive(name, v));
            }
        }
        for (&m, &w) in &self.weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(ConfigError::BadWeight(m, w));
            }
        }
        if !self.weights.values().any(|&w| w > 0.0) {
            return Err(ConfigError::AllWeightsZero);
        }
        if self.timestamp_field.is_empty() {
            return Err(ConfigError::EmptyField("timestamp"));
        }
        if self.sensor_id_field.is_empty() {
            return Err(ConfigError::EmptyField("sensor id"));
        }
        Ok(())
    }

    /// Configured weight of a metric; metrics absent from the map weigh zero.
    pub fn weight(&self, m: MetricId) -> f64 {
        self.weights.get(&m).copied().unwrap_or(0.0)
    }
}
