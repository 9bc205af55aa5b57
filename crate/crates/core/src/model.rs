//! Shared domain types: packets, sensor streams, metric results and the
//! metric registry.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

/// A scalar attribute value. Nested objects are flattened to dotted paths
/// during ingestion, so packets never hold composite values.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Bool(_) => "boolean",
            Value::Int(_) => "integer",
            Value::Float(_) => "float",
            Value::Str(_) => "string",
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Value::Int(i) => Some(i as f64),
            Value::Float(f) => Some(f),
            _ => None,
        }
    }
}

impl From<&Value> for serde_json::Value {
    fn from(v: &Value) -> Self {
        match v {
            Value::Null => serde_json::Value::Null,
            Value::Bool(b) => serde_json::Value::Bool(*b),
            Value::Int(i) => serde_json::Value::from(*i),
            Value::Float(f) => serde_json::Number::from_f64(*f)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null),
            Value::Str(s) => serde_json::Value::String(s.clone()),
        }
    }
}

/// One sensor observation.
///
/// `attributes` holds every flattened field of the source record, including
/// the envelope fields (sensor id and timestamp) in their raw form.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPacket {
    pub sensor_id: Arc<str>,
    /// Epoch milliseconds.
    pub timestamp_ms: i64,
    pub attributes: BTreeMap<Arc<str>, Value>,
}

impl DataPacket {
    pub fn new(
        sensor_id: impl Into<Arc<str>>,
        timestamp_ms: i64,
        attributes: BTreeMap<Arc<str>, Value>,
    ) -> Option<Self> {
        let sensor_id = sensor_id.into();
        if sensor_id.is_empty() {
            return None;
        }
        Some(Self {
            sensor_id,
            timestamp_ms,
            attributes,
        })
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.attributes.get(name)
    }
}

/// Time-sorted packets of one sensor together with their inter-arrival times.
#[derive(Debug, Clone)]
pub struct SensorStream {
    sensor_id: Arc<str>,
    packets: Vec<DataPacket>,
    iat_values: Vec<f64>,
}

impl SensorStream {
    /// Builds a stream, stable-sorting the packets by timestamp.
    pub fn new(sensor_id: Arc<str>, mut packets: Vec<DataPacket>) -> Self {
        packets.sort_by_key(|p| p.timestamp_ms);
        let iat_values = packets
            .windows(2)
            .map(|w| (w[1].timestamp_ms - w[0].timestamp_ms) as f64 / 1000.0)
            .collect();
        Self {
            sensor_id,
            packets,
            iat_values,
        }
    }

    pub fn sensor_id(&self) -> &str {
        &self.sensor_id
    }

    pub fn sensor_id_arc(&self) -> &Arc<str> {
        &self.sensor_id
    }

    pub fn packets(&self) -> &[DataPacket] {
        &self.packets
    }

    pub fn iat_values(&self) -> &[f64] {
        &self.iat_values
    }

    pub fn into_packets(self) -> Vec<DataPacket> {
        self.packets
    }
}

/// Central tendency of a stream's inter-arrival times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IatModel {
    pub mode: f64,
    pub quantization: f64,
    pub mad: f64,
    /// Mean absolute deviation from the mode, recorded only when `mad` is zero.
    pub fallback_mean_ad: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MetricId {
    M1,
    M2,
    M3,
    M4,
    M5,
    M6,
}

impl MetricId {
    pub const ALL: [MetricId; 6] = [
        MetricId::M1,
        MetricId::M2,
        MetricId::M3,
        MetricId::M4,
        MetricId::M5,
        MetricId::M6,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricId::M1 => "M1",
            MetricId::M2 => "M2",
            MetricId::M3 => "M3",
            MetricId::M4 => "M4",
            MetricId::M5 => "M5",
            MetricId::M6 => "M6",
        }
    }

    pub fn dimension(self) -> Dimension {
        match self {
            MetricId::M1 => Dimension::Timeliness,
            MetricId::M2 => Dimension::Consistency,
            MetricId::M3 => Dimension::Uniqueness,
            MetricId::M4 => Dimension::Completeness,
            MetricId::M5 | MetricId::M6 => Dimension::Validity,
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricId::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown metric id `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dimension {
    Timeliness,
    Consistency,
    Uniqueness,
    Completeness,
    Validity,
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegistryEntry {
    pub metric: MetricId,
    pub dimension: Dimension,
    pub description: &'static str,
}

/// The six metrics and the quality dimension each one measures.
pub fn registry() -> [RegistryEntry; 6] {
    const DESCRIPTIONS: [&str; 6] = [
        "IAT regularity: uniformity of the time between consecutive packets",
        "IAT outliers: share of inter-arrival times that deviate significantly from the mode",
        "Duplicates: share of repeated data packets",
        "Mandatory attributes: share of packets carrying every required attribute",
        "Unknown attributes: share of packets without attributes absent from the schema",
        "Attribute formats: share of packets whose attributes match the declared formats",
    ];
    let mut out = [RegistryEntry {
        metric: MetricId::M1,
        dimension: Dimension::Timeliness,
        description: "",
    }; 6];
    for (slot, (metric, description)) in out
        .iter_mut()
        .zip(MetricId::ALL.into_iter().zip(DESCRIPTIONS))
    {
        *slot = RegistryEntry {
            metric,
            dimension: metric.dimension(),
            description,
        };
    }
    out
}

/// A metric score, or the marker for inputs on which the metric is undefined
/// (for example a dataset without a single inter-arrival time).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Score {
    Value(f64),
    Inapplicable,
}

impl Score {
    pub fn value(self) -> Option<f64> {
        match self {
            Score::Value(v) => Some(v),
            Score::Inapplicable => None,
        }
    }

    pub fn is_applicable(self) -> bool {
        matches!(self, Score::Value(_))
    }
}

const INAPPLICABLE: &str = "inapplicable";

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match *self {
            Score::Value(v) => serializer.serialize_f64(v),
            Score::Inapplicable => serializer.serialize_str(INAPPLICABLE),
        }
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ScoreVisitor;

        impl Visitor<'_> for ScoreVisitor {
            type Value = Score;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "a number or \"{INAPPLICABLE}\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Score, E> {
                Ok(Score::Value(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Score, E> {
                Ok(Score::Value(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Score, E> {
                Ok(Score::Value(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Score, E> {
                if v == INAPPLICABLE {
                    Ok(Score::Inapplicable)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }

        deserializer.deserialize_any(ScoreVisitor)
    }
}

/// Upper bound on the number of individual findings kept as evidence.
pub const EVIDENCE_SAMPLE_LIMIT: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierSample {
    pub sensor_id: String,
    /// Position of the inter-arrival time within the sensor's deduplicated stream.
    pub index: usize,
    pub iat: f64,
    pub z: f64,
}

/// Metric-specific detail backing a score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evidence {
    Regularity {
        numerator_sum: f64,
        denominator_sum: f64,
        good_iats: u64,
        poor_iats: u64,
        /// Sensors whose inter-arrival times collapse to zero at every quantization.
        degenerate_sensors: Vec<String>,
    },
    Outliers {
        samples: Vec<OutlierSample>,
        degenerate_sensors: Vec<String>,
    },
    Duplicates {
        /// `sensor_id@timestamp_ms` of repeated packets, capped.
        samples: Vec<String>,
    },
    Schema {
        /// Violations per attribute, counted once per offending packet.
        per_attribute: BTreeMap<String, u64>,
    },
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub metric_id: MetricId,
    pub score: Score,
    pub numerator_count: u64,
    pub denominator_count: u64,
    pub evidence: Evidence,
}

impl MetricResult {
    /// Result of a ratio metric, `1 - violations / total`.
    pub fn ratio(metric_id: MetricId, violations: u64, total: u64, evidence: Evidence) -> Self {
        let score = if total == 0 {
            Score::Inapplicable
        } else {
            Score::Value(1.0 - violations as f64 / total as f64)
        };
        Self {
            metric_id,
            score,
            numerator_count: violations,
            denominator_count: total,
            evidence,
        }
    }
}

/// M1/M2 detail for one sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorBreakdown {
    pub sensor_id: String,
    pub packets: u64,
    pub duplicates: u64,
    pub iats: u64,
    pub model: Option<IatModel>,
    pub m1_numerator: f64,
    pub m1_denominator: f64,
    pub m1_score: Score,
    pub outliers: u64,
    pub m2_score: Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportWeights {
    /// Weights as configured.
    pub raw: BTreeMap<MetricId, f64>,
    /// Weights restricted to applicable metrics, summing to one.
    pub normalized: BTreeMap<MetricId, f64>,
}

/// Aggregated assessment of one dataset. Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    #[serde(rename = "version")]
    pub tool_version: String,
    pub dataset_fingerprint: String,
    pub created_at: String,
    #[serde(rename = "metrics")]
    pub per_metric: Vec<MetricResult>,
    pub per_sensor: Option<Vec<SensorBreakdown>>,
    pub weights: ReportWeights,
    pub aggregate_score: f64,
}

impl QualityReport {
    pub fn metric(&self, id: MetricId) -> Option<&MetricResult> {
        self.per_metric.iter().find(|m| m.metric_id == id)
    }

    pub fn score(&self, id: MetricId) -> Option<Score> {
        self.metric(id).map(|m| m.score)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_maps_metrics_to_dimensions() {
        let reg = registry();
        assert_eq!(reg.len(), 6);
        assert_eq!(reg[0].metric, MetricId::M1);
        assert_eq!(reg[0].dimension, Dimension::Timeliness);
        assert_eq!(reg[1].dimension, Dimension::Consistency);
        assert_eq!(reg[2].dimension, Dimension::Uniqueness);
        assert_eq!(reg[3].dimension, Dimension::Completeness);
        assert_eq!(reg[4].dimension, Dimension::Validity);
        assert_eq!(reg[5].dimension, Dimension::Validity);
        assert!(reg.iter().all(|e| !e.description.is_empty()));
    }

    #[test]
    fn score_serde() {
        let s = serde_json::to_string(&Score::Inapplicable).unwrap();
        assert_eq!(s, "\"inapplicable\"");
        assert_eq!(
            serde_json::from_str::<Score>(&s).unwrap(),
            Score::Inapplicable
        );
        assert_eq!(
            serde_json::from_str::<Score>("0.5").unwrap(),
            Score::Value(0.5)
        );
        assert_eq!(
            serde_json::from_str::<Score>("1").unwrap(),
            Score::Value(1.0)
        );
        assert!(serde_json::from_str::<Score>("\"n/a\"").is_err());
    }

    #[test]
    fn ratio_result() {
        let r = MetricResult::ratio(MetricId::M4, 1, 4, Evidence::None);
        assert_eq!(r.score, Score::Value(0.75));
        let r = MetricResult::ratio(MetricId::M4, 0, 0, Evidence::None);
        assert_eq!(r.score, Score::Inapplicable);
    }

    #[test]
    fn empty_sensor_id_rejected() {
        assert!(DataPacket::new("", 0, BTreeMap::new()).is_none());
        assert!(DataPacket::new("a", 0, BTreeMap::new()).is_some());
    }

    #[test]
    fn stream_sorts_and_derives_iats() {
        let p = |t| DataPacket::new("a", t, BTreeMap::new()).unwrap();
        let s = SensorStream::new("a".into(), vec![p(120_000), p(0), p(60_000)]);
        assert_eq!(s.iat_values(), &[60.0, 60.0]);
        let s = SensorStream::new("a".into(), vec![p(5)]);
        assert!(s.iat_values().is_empty());
    }
}
