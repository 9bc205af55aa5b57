//! Synthetic datasets with known defect counts.
//!
//! Clean inter-arrival times cluster around the programmed interval: each is
//! `interval * (1 + jitter * v)` with `v` uniform on `[-1, 1]`. The `v`
//! values of a sensor are drawn by stratified sampling (one draw per equal
//! slice of `[-1, 1]`, shuffled), so every draw is uniform while the spread
//! of a sensor's jitter is fixed by construction. Defects are injected by
//! choosing packet or IAT indices without replacement, making the counts in
//! [`GroundTruth`] exact rather than expected values.

use std::collections::BTreeMap;

use chrono::{DateTime, SecondsFormat};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};
use thiserror::Error;

use crate::config::AssessmentConfig;
use crate::model::MetricId;
use crate::schema::{AttributeSpec, DeclaredType, SchemaDocument};

/// Largest outlier rate whose injected IATs are guaranteed to exceed the
/// default Z cutoff, including the mean-deviation fallback at zero jitter.
pub const MAX_OUTLIER_RATE: f64 = 0.2;
/// Smallest outlier magnitude guaranteed to clear the cutoff at any allowed jitter.
pub const MIN_OUTLIER_MAGNITUDE: f64 = 4.0;
/// Jitter spans below this many seconds are swamped by millisecond rounding.
pub const MIN_JITTER_SPAN_SECONDS: f64 = 0.05;

const BASE_EPOCH_MS: i64 = 1_704_067_200_000; // 2024-01-01T00:00:00Z

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestampStyle {
    #[default]
    Rfc3339,
    EpochMs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    pub sensor_count: usize,
    pub packets_per_sensor: usize,
    pub interval_seconds: f64,
    pub jitter_fraction: f64,
    pub outlier_rate: f64,
    pub outlier_magnitude: f64,
    pub duplicate_rate: f64,
    pub missing_mandatory_rate: f64,
    pub unknown_attr_rate: f64,
    pub format_error_rate: f64,
    pub seed: u64,
    pub sensor_id_field: String,
    pub timestamp_field: String,
    pub sensor_prefix: String,
    pub timestamp_style: TimestampStyle,
    /// When set, every pattern-free string attribute carries this value.
    pub sentinel: Option<String>,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            sensor_count: 1,
            packets_per_sensor: 100,
            interval_seconds: 60.0,
            jitter_fraction: 0.0,
            outlier_rate: 0.0,
            outlier_magnitude: 10.0,
            duplicate_rate: 0.0,
            missing_mandatory_rate: 0.0,
            unknown_attr_rate: 0.0,
            format_error_rate: 0.0,
            seed: 0,
            sensor_id_field: "sensor_id".into(),
            timestamp_field: "timestamp".into(),
            sensor_prefix: "sensor-".into(),
            timestamp_style: TimestampStyle::default(),
            sentinel: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("invalid generator spec: {0}")]
    Invalid(String),
    #[error("contradictory generator spec: {0}")]
    Contradictory(String),
}

fn invalid(msg: impl Into<String>) -> GenError {
    GenError::Invalid(msg.into())
}

fn contradictory(msg: impl Into<String>) -> GenError {
    GenError::Contradictory(msg.into())
}

impl GenSpec {
    pub fn validate(&self) -> Result<(), GenError> {
        if self.sensor_count == 0 || self.packets_per_sensor == 0 {
            return Err(invalid(
                "sensor_count and packets_per_sensor must be positive",
            ));
        }
        let interval_ms = self.interval_seconds * 1000.0;
        if !(self.interval_seconds.is_finite() && self.interval_seconds > 0.0)
            || (interval_ms - interval_ms.round()).abs() > 1e-6
            || interval_ms < 2.0
        {
            return Err(invalid(
                "interval_seconds must be a positive whole number of milliseconds (>= 2 ms)",
            ));
        }
        if !(0.0..0.5).contains(&self.jitter_fraction) {
            return Err(invalid("jitter_fraction must lie in [0, 0.5)"));
        }
        if self.jitter_fraction > 0.0
            && self.jitter_fraction * self.interval_seconds < MIN_JITTER_SPAN_SECONDS
        {
            return Err(invalid(format!(
                "jitter span below {MIN_JITTER_SPAN_SECONDS} s is dominated by millisecond rounding"
            )));
        }
        for (name, r) in [
            ("outlier_rate", self.outlier_rate),
            ("duplicate_rate", self.duplicate_rate),
            ("missing_mandatory_rate", self.missing_mandatory_rate),
            ("unknown_attr_rate", self.unknown_attr_rate),
            ("format_error_rate", self.format_error_rate),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(invalid(format!("{name} must lie in [0, 1)")));
            }
        }
        if self.outlier_rate > MAX_OUTLIER_RATE {
            return Err(contradictory(format!(
                "outlier_rate above {MAX_OUTLIER_RATE} cannot guarantee every injected IAT is an outlier"
            )));
        }
        if self.outlier_rate > 0.0 && self.outlier_magnitude < MIN_OUTLIER_MAGNITUDE {
            return Err(contradictory(format!(
                "outlier_magnitude must be at least {MIN_OUTLIER_MAGNITUDE}"
            )));
        }
        if self.sensor_id_field.is_empty()
            || self.timestamp_field.is_empty()
            || self.sensor_id_field == self.timestamp_field
        {
            return Err(invalid(
                "envelope field names must be non-empty and distinct",
            ));
        }
        Ok(())
    }

    /// Assessment configuration under which [`GroundTruth`] predictions hold:
    /// the generator's field names and a quantization equal to the interval,
    /// so every clean IAT falls in the interval's bin.
    pub fn recommended_config(&self) -> AssessmentConfig {
        AssessmentConfig {
            timestamp_field: self.timestamp_field.clone(),
            sensor_id_field: self.sensor_id_field.clone(),
            quantization_seconds: self.interval_seconds,
            ..AssessmentConfig::default()
        }
    }
}

/// Exact bookkeeping of what the generator emitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub interval_seconds: f64,
    pub total_packets: u64,
    pub unique_packets: u64,
    pub duplicates: u64,
    /// IATs of the deduplicated streams.
    pub total_iats: u64,
    pub outlier_iats: u64,
    pub missing_mandatory_packets: u64,
    pub unknown_attr_packets: u64,
    pub format_error_packets: u64,
    /// Closed-form scores for M2 through M6.
    pub expected: BTreeMap<MetricId, f64>,
    pub sentinels: Vec<String>,
}

impl GroundTruth {
    fn fill_expected(&mut self) {
        let ratio = |bad: u64, total: u64| 1.0 - bad as f64 / total as f64;
        let mut e = BTreeMap::new();
        if self.total_iats > 0 {
            e.insert(MetricId::M2, ratio(self.outlier_iats, self.total_iats));
        }
        e.insert(MetricId::M3, ratio(self.duplicates, self.total_packets));
        e.insert(
            MetricId::M4,
            ratio(self.missing_mandatory_packets, self.total_packets),
        );
        e.insert(
            MetricId::M5,
            ratio(self.unknown_attr_packets, self.total_packets),
        );
        e.insert(
            MetricId::M6,
            ratio(self.format_error_packets, self.total_packets),
        );
        self.expected = e;
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    /// NDJSON, one packet per line.
    pub data: Vec<u8>,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone, Copy, Default)]
struct Defects {
    missing: bool,
    unknown: bool,
    format: bool,
}

struct Row {
    sensor: usize,
    ts_ms: i64,
    defects: Defects,
}

fn pattern_string(name: &str, re: &Regex) -> Result<String, GenError> {
    const CANDIDATES: &[&str] = &[
        "ok", "OK", "A", "AA", "a1", "A1", "ok-1", "0", "1", "00", "12", "123", "abc", "ABC", "x",
        "X", "on", "off", "true", "low", "normal",
    ];
    CANDIDATES
        .iter()
        .find(|c| re.is_match(c))
        .map(|c| c.to_string())
        .ok_or_else(|| {
            contradictory(format!(
                "cannot produce a value matching the pattern of `{name}`"
            ))
        })
}

fn clean_value(
    name: &str,
    spec: &AttributeSpec,
    sentinel: Option<&str>,
    rng: &mut ChaCha8Rng,
) -> Result<Json, GenError> {
    Ok(match spec.declared_type {
        DeclaredType::Integer => {
            let lo = spec.min.map_or(0, |m| m.ceil() as i64);
            let hi = spec.max.map_or(lo.max(0) + 1000, |m| m.floor() as i64);
            if lo > hi {
                return Err(contradictory(format!(
                    "no integer fits the range of `{name}`"
                )));
            }
            Json::from(rng.gen_range(lo..=hi))
        }
        DeclaredType::Float => {
            let lo = spec.min.unwrap_or(0.0);
            let hi = spec.max.unwrap_or(lo.max(0.0) + 1000.0);
            let x: f64 = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            let x = ((x * 1000.0).round() / 1000.0).clamp(lo, hi);
            Json::from(x)
        }
        DeclaredType::Boolean => Json::Bool(rng.gen()),
        DeclaredType::String => match (&spec.pattern, sentinel) {
            (Some(re), _) => Json::String(pattern_string(name, re)?),
            (None, Some(s)) => Json::String(s.to_string()),
            (None, None) => Json::String(format!("ok-{}", rng.gen_range(0..100))),
        },
    })
}

fn wrong_value(t: DeclaredType) -> Json {
    match t {
        DeclaredType::Integer | DeclaredType::Float | DeclaredType::Boolean => {
            Json::String("corrupt".into())
        }
        DeclaredType::String => Json::Bool(true),
    }
}

/// Stratified uniform draws on [-1, 1], shuffled.
fn stratified_unit(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|k| -1.0 + 2.0 * (k as f64 + rng.gen::<f64>()) / n as f64)
        .collect();
    v.shuffle(rng);
    v
}

fn choose(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut v = index::sample(rng, n, k.min(n)).into_vec();
    v.sort_unstable();
    v
}

fn count_for(rate: f64, n: usize) -> usize {
    (rate * n as f64).round() as usize
}

/// Generates a dataset conforming to `schema` except for the injected defects.
pub fn generate(spec: &GenSpec, schema: &SchemaDocument) -> Result<GeneratedDataset, GenError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let envelope = [spec.sensor_id_field.as_str(), spec.timestamp_field.as_str()];

    let payload: Vec<(&String, &AttributeSpec)> = schema
        .attributes
        .iter()
        .filter(|(k, _)| !envelope.contains(&k.as_str()))
        .collect();
    let mandatory: Vec<&String> = schema
        .mandatory
        .iter()
        .filter(|m| !envelope.contains(&m.as_str()))
        .collect();
    if spec.missing_mandatory_rate > 0.0 && mandatory.is_empty() {
        return Err(contradictory(
            "missing_mandatory_rate > 0 but the schema has no mandatory payload attribute",
        ));
    }
    if spec.format_error_rate > 0.0 && payload.is_empty() {
        return Err(contradictory(
            "format_error_rate > 0 but the schema declares no payload attribute",
        ));
    }
    if spec.format_error_rate > 0.0 && spec.missing_mandatory_rate > 0.0 && payload.len() < 2 {
        return Err(contradictory(
            "format errors and missing attributes together need at least two payload attributes",
        ));
    }
    let numeric_ids = match schema.attributes.get(&spec.sensor_id_field) {
        Some(a) if a.declared_type == DeclaredType::Integer => true,
        Some(a) if a.declared_type != DeclaredType::String => {
            return Err(contradictory(
                "sensor id field must be declared as string or integer",
            ))
        }
        _ => false,
    };
    let ts_style = match schema
        .attributes
        .get(&spec.timestamp_field)
        .map(|a| a.declared_type)
    {
        None => spec.timestamp_style,
        Some(DeclaredType::String) => TimestampStyle::Rfc3339,
        Some(DeclaredType::Integer | DeclaredType::Float) => TimestampStyle::EpochMs,
        Some(DeclaredType::Boolean) => {
            return Err(contradictory("timestamp field cannot be declared boolean"))
        }
    };
    let mut unknown_name = String::from("unexpected_attr");
    while schema.attributes.contains_key(&unknown_name) || envelope.contains(&unknown_name.as_str())
    {
        unknown_name.push('_');
    }

    let sensors = spec.sensor_count;
    let per_sensor = spec.packets_per_sensor;
    let total = sensors * per_sensor;
    let dup_total = count_for(spec.duplicate_rate, total);
    let interval_ms = (spec.interval_seconds * 1000.0).round() as i64;

    // Unique packet timelines.
    let mut rows: Vec<Row> = Vec::with_capacity(total);
    let mut dup_per_sensor = Vec::with_capacity(sensors);
    let mut total_iats = 0u64;
    let mut outlier_iats = 0u64;
    for s in 0..sensors {
        let dups = dup_total / sensors + usize::from(s < dup_total % sensors);
        let unique = per_sensor
            .checked_sub(dups)
            .filter(|&u| u >= dups && u >= 1)
            .ok_or_else(|| contradictory("duplicate_rate leaves too few unique packets to copy"))?;
        dup_per_sensor.push(dups);

        let n_iats = unique - 1;
        let outliers = (spec.outlier_rate * n_iats as f64 + 1e-9).floor() as usize;
        let outlier_idx = choose(n_iats, outliers, &mut rng);
        let jitter = stratified_unit(n_iats, &mut rng);
        total_iats += n_iats as u64;
        outlier_iats += outliers as u64;

        let mut t = BASE_EPOCH_MS + (s as i64) * 137;
        let mut next_outlier = outlier_idx.iter().peekable();
        rows.push(Row {
            sensor: s,
            ts_ms: t,
            defects: Defects::default(),
        });
        for (k, v) in jitter.iter().enumerate() {
            let base = if next_outlier.peek() == Some(&&k) {
                next_outlier.next();
                spec.outlier_magnitude * interval_ms as f64
            } else {
                interval_ms as f64
            };
            let iat = (base + spec.jitter_fraction * interval_ms as f64 * v).round() as i64;
            t += iat.max(1);
            rows.push(Row {
                sensor: s,
                ts_ms: t,
                defects: Defects::default(),
            });
        }
    }

    let unique_total = rows.len();
    for i in choose(
        unique_total,
        count_for(spec.missing_mandatory_rate, unique_total),
        &mut rng,
    ) {
        rows[i].defects.missing = true;
    }
    for i in choose(
        unique_total,
        count_for(spec.unknown_attr_rate, unique_total),
        &mut rng,
    ) {
        rows[i].defects.unknown = true;
    }
    for i in choose(
        unique_total,
        count_for(spec.format_error_rate, unique_total),
        &mut rng,
    ) {
        rows[i].defects.format = true;
    }

    // Duplicates: copies of distinct unique packets of the same sensor.
    let mut copies = vec![0usize; unique_total];
    let mut start = 0;
    for (s, &dups) in dup_per_sensor.iter().enumerate() {
        let unique = per_sensor - dups;
        for i in choose(unique, dups, &mut rng) {
            copies[start + i] = 1;
        }
        debug_assert!(rows[start].sensor == s);
        start += unique;
    }

    let sensor_ids: Vec<Json> = (0..sensors)
        .map(|s| {
            if numeric_ids {
                Json::from(s as i64)
            } else {
                Json::String(format!("{}{s}", spec.sensor_prefix))
            }
        })
        .collect();

    let mut truth = GroundTruth {
        seed: spec.seed,
        interval_seconds: spec.interval_seconds,
        total_packets: total as u64,
        unique_packets: unique_total as u64,
        duplicates: dup_total as u64,
        total_iats,
        outlier_iats,
        missing_mandatory_packets: 0,
        unknown_attr_packets: 0,
        format_error_packets: 0,
        expected: BTreeMap::new(),
        sentinels: spec.sentinel.iter().cloned().collect(),
    };
    if !numeric_ids {
        truth.sentinels.push(spec.sensor_prefix.clone());
    }

    // Emit in arrival order across sensors, copies right after their original.
    let mut order: Vec<usize> = (0..unique_total).collect();
    order.sort_by_key(|&i| (rows[i].ts_ms, rows[i].sensor));
    let mut data = Vec::with_capacity(total * 96);
    for i in order {
        let row = &rows[i];
        let mut obj = Map::new();
        obj.insert(spec.sensor_id_field.clone(), sensor_ids[row.sensor].clone());
        let ts = match ts_style {
            TimestampStyle::EpochMs => Json::from(row.ts_ms),
            TimestampStyle::Rfc3339 => Json::String(
                DateTime::from_timestamp_millis(row.ts_ms)
                    .expect("timestamp in range")
                    .to_rfc3339_opts(SecondsFormat::Millis, true),
            ),
        };
        obj.insert(spec.timestamp_field.clone(), ts);
        for (name, a) in &payload {
            obj.insert(
                (*name).clone(),
                clean_value(name, a, spec.sentinel.as_deref(), &mut rng)?,
            );
        }
        let mut removed: Option<&String> = None;
        if row.defects.missing {
            let m = mandatory[rng.gen_range(0..mandatory.len())];
            obj.remove(m.as_str());
            removed = Some(m);
        }
        if row.defects.unknown {
            obj.insert(unknown_name.clone(), Json::from(1));
        }
        if row.defects.format {
            let candidates: Vec<&(&String, &AttributeSpec)> = payload
                .iter()
                .filter(|(n, _)| Some(*n) != removed)
                .collect();
            let (name, a) = candidates[rng.gen_range(0..candidates.len())];
            obj.insert((*name).clone(), wrong_value(a.declared_type));
        }
        let line = serde_json::to_vec(&obj).expect("object serializes");
        let times = 1 + copies[i];
        for _ in 0..times {
            data.extend_from_slice(&line);
            data.push(b'\n');
        }
        let n = times as u64;
        truth.missing_mandatory_packets += n * u64::from(row.defects.missing);
        truth.unknown_attr_packets += n * u64::from(row.defects.unknown);
        truth.format_error_packets += n * u64::from(row.defects.format);
    }
    truth.fill_expected();
    Ok(GeneratedDataset { data, truth })
}

/// Counts of IATs per bin of width `bin_width`, bins centred on multiples of
/// the width and listed in ascending order. Empty bins are omitted.
pub fn iat_histogram(iats: &[f64], bin_width: f64) -> Vec<(f64, usize)> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Vec::new();
    }
    let mut bins: BTreeMap<i64, usize> = BTreeMap::new();
    for &x in iats {
        *bins.entry((x / bin_width).round() as i64).or_insert(0) += 1;
    }
    bins.into_iter()
        .map(|(k, c)| (k as f64 * bin_width, c))
        .collect()
}

/// A small air-quality schema used when no schema is supplied.
pub const DEFAULT_SCHEMA: &str = r#"{
  "properties": {
    "pm25": {"type": "number", "minimum": 0, "maximum": 500},
    "pm10": {"type": "number", "minimum": 0, "maximum": 600},
    "temperature": {"type": "number", "minimum": -40, "maximum": 60},
    "station": {"type": "string"},
    "status_ok": {"type": "boolean"}
  },
  "required": ["pm25", "pm10"]
}"#;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::parse_schema;

    fn schema() -> SchemaDocument {
        parse_schema(DEFAULT_SCHEMA.as_bytes()).unwrap()
    }

    #[test]
    fn deterministic_for_seed() {
        let spec = GenSpec {
            jitter_fraction: 0.1,
            duplicate_rate: 0.05,
            seed: 9,
            ..Default::default()
        };
        let a = generate(&spec, &schema()).unwrap();
        let b = generate(&spec, &schema()).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.truth, b.truth);
        let c = generate(&GenSpec { seed: 10, ..spec }, &schema()).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn duplicate_bookkeeping() {
        let spec = GenSpec {
            packets_per_sensor: 1000,
            duplicate_rate: 0.1,
            ..Default::default()
        };
        let g = generate(&spec, &schema()).unwrap();
        assert_eq!(g.truth.duplicates, 100);
        assert_eq!(g.truth.expected[&MetricId::M3], 0.9);
        assert_eq!(g.data.iter().filter(|&&b| b == b'\n').count(), 1000);
    }

    #[test]
    fn outlier_bookkeeping() {
        let spec = GenSpec {
            packets_per_sensor: 101,
            outlier_rate: 0.05,
            jitter_fraction: 0.1,
            ..Default::default()
        };
        let g = generate(&spec, &schema()).unwrap();
        assert_eq!(g.truth.total_iats, 100);
        assert_eq!(g.truth.outlier_iats, 5);
        assert_eq!(g.truth.expected[&MetricId::M2], 0.95);
    }

    #[test]
    fn rejects_contradictions() {
        let s = schema();
        let bad = |spec: GenSpec| generate(&spec, &s).unwrap_err();
        assert!(matches!(
            bad(GenSpec {
                duplicate_rate: 0.6,
                ..Default::default()
            }),
            GenError::Contradictory(_)
        ));
        assert!(matches!(
            bad(GenSpec {
                outlier_rate: 0.3,
                ..Default::default()
            }),
            GenError::Contradictory(_)
        ));
        assert!(matches!(
            bad(GenSpec {
                jitter_fraction: 0.5,
                ..Default::default()
            }),
            GenError::Invalid(_)
        ));
        assert!(matches!(
            bad(GenSpec {
                interval_seconds: 0.0,
                ..Default::default()
            }),
            GenError::Invalid(_)
        ));
        let empty = parse_schema(b"{}").unwrap();
        assert!(matches!(
            generate(
                &GenSpec {
                    missing_mandatory_rate: 0.1,
                    ..Default::default()
                },
                &empty
            ),
            Err(GenError::Contradictory(_))
        ));
    }

    #[test]
    fn histogram() {
        assert!(iat_histogram(&[], 1.0).is_empty());
        let h = iat_histogram(&[59.6, 60.2, 60.4, 120.0, 0.2], 1.0);
        assert_eq!(h, vec![(0.0, 1), (60.0, 3), (120.0, 1)]);
        assert_eq!(h.iter().map(|b| b.1).sum::<usize>(), 5);
    }

    #[test]
    fn stratified_draws_cover_the_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut v = stratified_unit(10, &mut rng);
        v.sort_by(f64::total_cmp);
        for (k, x) in v.iter().enumerate() {
            assert!(*x >= -1.0 + 0.2 * k as f64 && *x <= -1.0 + 0.2 * (k + 1) as f64);
        }
    }
}
