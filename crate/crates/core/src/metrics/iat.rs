//! Inter-arrival time metrics: regularity (M1), outliers (M2) and
//! duplicates (M3).
//!
//! Both IAT metrics measure deviation from the mode of the IATs, which stands
//! in for the sensor's programmed reporting interval. M1 scores each IAT by
//! its relative absolute error `|x - mode| / mode`; M2 flags IATs whose
//! modified Z-score, computed around the mode instead of the median, exceeds
//! a cutoff.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{AssessmentConfig, DuplicateKey, ModeScope};
use crate::model::{
    DataPacket, Evidence, IatModel, MetricId, MetricResult, OutlierSample, Score, SensorBreakdown,
    SensorStream, Value, EVIDENCE_SAMPLE_LIMIT,
};

/// Consistency constant of the modified Z-score (MAD based).
pub const MAD_Z_FACTOR: f64 = 0.6745;
/// Consistency constant used when the MAD is zero and the mean absolute
/// deviation takes its place.
pub const MEAN_AD_Z_FACTOR: f64 = 0.7979;
/// Finest quantization tried before the IATs are declared degenerate.
pub const FINEST_QUANTIZATION: f64 = 0.001;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModeError {
    #[error("no inter-arrival times")]
    Empty,
    #[error("quantization must be positive, got {0}")]
    BadQuantization(f64),
    #[error("inter-arrival times collapse to zero even at 1 ms quantization")]
    Degenerate,
}

/// Relative absolute error of one IAT.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaeValue {
    pub iat: f64,
    pub rae: f64,
}

impl RaeValue {
    pub fn new(iat: f64, mode: f64) -> Self {
        Self {
            iat,
            rae: (iat - mode).abs() / mode,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierLabel {
    pub iat: f64,
    pub z: f64,
    pub is_outlier: bool,
}

/// Most frequent IAT after rounding to multiples of `quantization`, ties
/// going to the smallest value. A zero mode triggers refinement of the
/// quantization by factors of ten down to one millisecond.
pub fn estimate_mode(iats: &[f64], quantization: f64) -> Result<IatModel, ModeError> {
    if iats.is_empty() {
        return Err(ModeError::Empty);
    }
    if !(quantization.is_finite() && quantization > 0.0) {
        return Err(ModeError::BadQuantization(quantization));
    }
    // Refinements are tracked as `quantization / 10^n` so that bin centres stay
    // exact for decimal quantizations (600 * 0.1 != 60.0 in binary).
    let mut divisor = 1.0_f64;
    let mut counts: HashMap<i64, usize> = HashMap::new();
    loop {
        let q = quantization / divisor;
        counts.clear();
        for &x in iats {
            let bin = (x * divisor / quantization).round() as i64;
            *counts.entry(bin).or_insert(0) += 1;
        }
        let (&bin, _) = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .expect("non-empty");
        if bin != 0 {
            let mode = bin as f64 * quantization / divisor;
            return Ok(model_for_mode(iats, mode, q));
        }
        if q <= FINEST_QUANTIZATION * (1.0 + 1e-9) {
            return Err(ModeError::Degenerate);
        }
        divisor *= 10.0;
    }
}

/// Builds the dispersion part of the model (MAD and its fallback) for a given mode.
pub fn model_for_mode(iats: &[f64], mode: f64, quantization: f64) -> IatModel {
    let mut dev: Vec<f64> = iats.iter().map(|x| (x - mode).abs()).collect();
    let mad = median_in_place(&mut dev);
    let fallback_mean_ad = (mad == 0.0).then(|| dev.iter().sum::<f64>() / dev.len() as f64);
    IatModel {
        mode,
        quantization,
        mad,
        fallback_mean_ad,
    }
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    let mid = n / 2;
    let (lower, &mut upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        upper
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (below + upper) / 2.0
    }
}

/// Running sums behind M1, summable across sensors.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RegularityTerms {
    pub numerator: f64,
    pub denominator: f64,
    pub good: u64,
    pub poor: u64,
}

impl RegularityTerms {
    /// An IAT with `rae <= crossover` adds `1 - rae/crossover` to the numerator
    /// and 1 to the denominator; a poorer one adds `rae/crossover` to the
    /// denominator only. At crossover 0.5 these are the `1 - 2 RAE` and
    /// `2 RAE` terms.
    pub fn add(&mut self, rae: f64, crossover: f64) {
        if rae <= crossover {
            self.numerator += 1.0 - rae / crossover;
            self.denominator += 1.0;
            self.good += 1;
        } else {
            self.denominator += rae / crossover;
            self.poor += 1;
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.numerator += other.numerator;
        self.denominator += other.denominator;
        self.good += other.good;
        self.poor += other.poor;
    }

    pub fn score(&self) -> Score {
        if self.good + self.poor == 0 {
            Score::Inapplicable
        } else {
            Score::Value(self.numerator / self.denominator)
        }
    }
}

pub fn regularity_terms(iats: &[f64], mode: f64, crossover: f64) -> RegularityTerms {
    let mut t = RegularityTerms::default();
    for &x in iats {
        t.add(RaeValue::new(x, mode).rae, crossover);
    }
    t
}

fn regularity_result(terms: RegularityTerms, degenerate_sensors: Vec<String>) -> MetricResult {
    MetricResult {
        metric_id: MetricId::M1,
        score: terms.score(),
        numerator_count: 0,
        denominator_count: 0,
        evidence: Evidence::Regularity {
            numerator_sum: terms.numerator,
            denominator_sum: terms.denominator,
            good_iats: terms.good,
            poor_iats: terms.poor,
            degenerate_sensors,
        },
    }
}

/// M1: IAT regularity.
pub fn m1_regularity(iats: &[f64], model: &IatModel, crossover: f64) -> MetricResult {
    regularity_result(regularity_terms(iats, model.mode, crossover), Vec::new())
}

/// Modified Z-score of one IAT. Falls back to the mean absolute deviation
/// when the MAD is zero, and to zero when both are zero.
pub fn modified_z(iat: f64, model: &IatModel) -> f64 {
    let d = iat - model.mode;
    if model.mad > 0.0 {
        MAD_Z_FACTOR * d / model.mad
    } else {
        match model.fallback_mean_ad {
            Some(mean_ad) if mean_ad > 0.0 => MEAN_AD_Z_FACTOR * d / mean_ad,
            _ => 0.0,
        }
    }
}

pub fn label_outliers(iats: &[f64], model: &IatModel, z_cutoff: f64) -> Vec<OutlierLabel> {
    iats.iter()
        .map(|&iat| {
            let z = modified_z(iat, model);
            OutlierLabel {
                iat,
                z,
                is_outlier: z.abs() > z_cutoff,
            }
        })
        .collect()
}

/// M2: IAT outliers.
pub fn m2_outliers(iats: &[f64], model: &IatModel, z_cutoff: f64) -> MetricResult {
    let labels = label_outliers(iats, model, z_cutoff);
    let samples: Vec<OutlierSample> = labels
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_outlier)
        .take(EVIDENCE_SAMPLE_LIMIT)
        .map(|(index, l)| OutlierSample {
            sensor_id: String::new(),
            index,
            iat: l.iat,
            z: l.z,
        })
        .collect();
    let outliers = labels.iter().filter(|l| l.is_outlier).count() as u64;
    MetricResult::ratio(
        MetricId::M2,
        outliers,
        iats.len() as u64,
        Evidence::Outliers {
            samples,
            degenerate_sensors: Vec::new(),
        },
    )
}

/// Canonical digest of a whole packet: sensor id, timestamp and every
/// attribute with a type tag.
pub fn packet_digest(p: &DataPacket) -> [u8; 32] {
    let mut h = Sha256::new();
    let mut field = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    field(p.sensor_id.as_bytes());
    field(&p.timestamp_ms.to_le_bytes());
    for (k, v) in &p.attributes {
        field(k.as_bytes());
        match v {
            Value::Null => field(b"n"),
            Value::Bool(b) => field(if *b { b"t" } else { b"f" }),
            Value::Int(i) => {
                field(b"i");
                field(&i.to_le_bytes());
            }
            Value::Float(f) => {
                field(b"d");
                field(&f.to_bits().to_le_bytes());
            }
            Value::Str(s) => {
                field(b"s");
                field(s.as_bytes());
            }
        }
    }
    h.finalize().into()
}

fn duplicate_label(p: &DataPacket) -> String {
    format!("{}@{}", p.sensor_id, p.timestamp_ms)
}

/// M3: duplicates, counted as every occurrence of a key beyond its first.
pub fn m3_duplicates(packets: &[DataPacket], duplicate_key: DuplicateKey) -> MetricResult {
    let mut samples = Vec::new();
    let mut duplicates = 0u64;
    let mut note = |p: &DataPacket| {
        duplicates += 1;
        if samples.len() < EVIDENCE_SAMPLE_LIMIT {
            samples.push(duplicate_label(p));
        }
    };
    match duplicate_key {
        DuplicateKey::IdTimestamp => {
            let mut seen: HashSet<(&str, i64)> = HashSet::with_capacity(packets.len());
            for p in packets {
                if !seen.insert((&p.sensor_id, p.timestamp_ms)) {
                    note(p);
                }
            }
        }
        DuplicateKey::FullPacket => {
            let mut seen = HashSet::with_capacity(packets.len());
            for p in packets {
                if !seen.insert(packet_digest(p)) {
                    note(p);
                }
            }
        }
    }
    MetricResult::ratio(
        MetricId::M3,
        duplicates,
        packets.len() as u64,
        Evidence::Duplicates { samples },
    )
}

#[derive(Debug)]
pub struct Deduplicated {
    pub stream: SensorStream,
    pub duplicates: Vec<DataPacket>,
}

/// Drops repeated packets from a stream, keeping the first occurrence of
/// each duplicate key in input order. IATs are derived from the result.
pub fn deduplicate(stream: SensorStream, duplicate_key: DuplicateKey) -> Deduplicated {
    let id: Arc<str> = stream.sensor_id_arc().clone();
    let mut kept: Vec<DataPacket> = Vec::with_capacity(stream.packets().len());
    let mut duplicates = Vec::new();
    match duplicate_key {
        DuplicateKey::IdTimestamp => {
            // Sorted stream: equal timestamps are adjacent, earliest input first.
            for p in stream.into_packets() {
                match kept.last() {
                    Some(prev) if prev.timestamp_ms == p.timestamp_ms => duplicates.push(p),
                    _ => kept.push(p),
                }
            }
        }
        DuplicateKey::FullPacket => {
            let mut seen = HashSet::new();
            for p in stream.into_packets() {
                if seen.insert(packet_digest(&p)) {
                    kept.push(p);
                } else {
                    duplicates.push(p);
                }
            }
        }
    }
    Deduplicated {
        stream: SensorStream::new(id, kept),
        duplicates,
    }
}

/// M1 and M2 over a set of deduplicated streams, plus per-sensor detail.
#[derive(Debug, Clone)]
pub struct IatAssessment {
    pub m1: MetricResult,
    pub m2: MetricResult,
    pub per_sensor: Vec<SensorBreakdown>,
}

/// Scores M1 and M2 under the configured mode scope. Per-IAT contributions
/// are pooled across sensors before the final ratio. Sensors whose IATs are
/// degenerate (all zero at the finest quantization) are excluded and listed
/// in the evidence.
pub fn assess_iats(
    streams: &[SensorStream],
    duplicates_per_stream: &[u64],
    config: &AssessmentConfig,
) -> IatAssessment {
    let q = config.quantization_seconds;
    let shared_model = match config.mode_scope {
        ModeScope::Dataset => {
            let pooled: Vec<f64> = streams
                .iter()
                .flat_map(|s| s.iat_values().iter().copied())
                .collect();
            Some(estimate_mode(&pooled, q))
        }
        ModeScope::PerSensor => None,
    };

    let mut m1_terms = RegularityTerms::default();
    let mut outliers = 0u64;
    let mut total_iats = 0u64;
    let mut samples = Vec::new();
    let mut degenerate = Vec::new();
    let mut per_sensor = Vec::with_capacity(streams.len());

    for (i, s) in streams.iter().enumerate() {
        let iats = s.iat_values();
        let model = if iats.is_empty() {
            None
        } else {
            let m = match &shared_model {
                Some(shared) => shared.clone(),
                None => estimate_mode(iats, q),
            };
            match m {
                Ok(m) => Some(m),
                Err(_) => {
                    degenerate.push(s.sensor_id().to_string());
                    None
                }
            }
        };

        let mut terms = RegularityTerms::default();
        let mut sensor_outliers = 0u64;
        if let Some(model) = &model {
            terms = regularity_terms(iats, model.mode, config.rae_crossover);
            for (index, l) in label_outliers(iats, model, config.z_cutoff)
                .into_iter()
                .enumerate()
            {
                if l.is_outlier {
                    sensor_outliers += 1;
                    if samples.len() < EVIDENCE_SAMPLE_LIMIT {
                        samples.push(OutlierSample {
                            sensor_id: s.sensor_id().to_string(),
                            index,
                            iat: l.iat,
                            z: l.z,
                        });
                    }
                }
            }
            m1_terms.merge(&terms);
            outliers += sensor_outliers;
            total_iats += iats.len() as u64;
        }

        let counted = model.is_some();
        per_sensor.push(SensorBreakdown {
            sensor_id: s.sensor_id().to_string(),
            packets: s.packets().len() as u64 + duplicates_per_stream.get(i).copied().unwrap_or(0),
            duplicates: duplicates_per_stream.get(i).copied().unwrap_or(0),
            iats: iats.len() as u64,
            model,
            m1_numerator: terms.numerator,
            m1_denominator: terms.denominator,
            m1_score: if counted {
                terms.score()
            } else {
                Score::Inapplicable
            },
            outliers: sensor_outliers,
            m2_score: if counted {
                Score::Value(1.0 - sensor_outliers as f64 / iats.len() as f64)
            } else {
                Score::Inapplicable
            },
        });
    }

    let m1 = regularity_result(m1_terms, degenerate.clone());
    let m2 = MetricResult::ratio(
        MetricId::M2,
        outliers,
        total_iats,
        Evidence::Outliers {
            samples,
            degenerate_sensors: degenerate,
        },
    );
    IatAssessment { m1, m2, per_sensor }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn model(iats: &[f64]) -> IatModel {
        estimate_mode(iats, 1.0).unwrap()
    }

    #[test]
    fn mode_by_quantized_bins() {
        let m = model(&[59.7, 60.2, 60.4, 120.1]);
        assert_eq!(m.mode, 60.0);
        assert_eq!(m.quantization, 1.0);
    }

    #[test]
    fn constant_iats_have_zero_mad() {
        let m = model(&[60.0, 60.0, 60.0]);
        assert_eq!(m.mode, 60.0);
        assert_eq!(m.mad, 0.0);
        assert_eq!(m.fallback_mean_ad, Some(0.0));
    }

    #[test]
    fn mode_ties_break_to_smallest() {
        assert_eq!(model(&[30.0, 30.0, 60.0, 60.0]).mode, 30.0);
        assert_eq!(model(&[60.0, 60.0, 30.0, 30.0]).mode, 30.0);
    }

    #[test]
    fn zero_mode_refines_quantization() {
        let m = estimate_mode(&[0.2, 0.2, 0.3, 5.0], 1.0).unwrap();
        assert_eq!(m.mode, 0.2);
        assert!((m.quantization - 0.1).abs() < 1e-15);
        let m = estimate_mode(&[0.004, 0.004, 0.0], 1.0).unwrap();
        assert_eq!(m.mode, 0.004);
        assert_eq!(
            estimate_mode(&[0.0, 0.0, 7.0], 1.0),
            Err(ModeError::Degenerate)
        );
        assert_eq!(estimate_mode(&[], 1.0), Err(ModeError::Empty));
        assert!(matches!(
            estimate_mode(&[1.0], 0.0),
            Err(ModeError::BadQuantization(_))
        ));
    }

    #[test]
    fn decimal_refinement_keeps_exact_modes() {
        let m = estimate_mode(&[0.0, 0.0, 0.0, 0.4, 0.4, 0.4, 0.4], 1.0).unwrap();
        assert_eq!(m.mode, 0.4);
    }

    #[test]
    fn mad_is_median_deviation_from_mode() {
        let m = model(&[58.0, 59.0, 60.0, 60.0, 60.0, 61.0, 62.0, 600.0]);
        assert_eq!(m.mode, 60.0);
        assert_eq!(m.mad, 1.0);
        assert_eq!(m.fallback_mean_ad, None);
    }

    #[test]
    fn m1_examples() {
        let it = [60.0; 4];
        assert_eq!(
            m1_regularity(&it, &model(&it), 0.5).score,
            Score::Value(1.0)
        );
        let it = [60.0, 60.0, 60.0, 90.0];
        let r = m1_regularity(&it, &model(&it), 0.5);
        assert_eq!(r.score, Score::Value(0.75));
        let Evidence::Regularity {
            numerator_sum,
            denominator_sum,
            ..
        } = r.evidence
        else {
            panic!()
        };
        assert_eq!((numerator_sum, denominator_sum), (3.0, 4.0));
        let it = [60.0, 60.0, 180.0];
        assert_eq!(
            m1_regularity(&it, &model(&it), 0.5).score,
            Score::Value(1.0 / 3.0)
        );
        assert_eq!(
            m1_regularity(&[], &model(&[1.0]), 0.5).score,
            Score::Inapplicable
        );
    }

    #[test]
    fn m2_examples() {
        let it = [58.0, 59.0, 60.0, 60.0, 60.0, 61.0, 62.0, 600.0];
        let m = model(&it);
        let labels = label_outliers(&it, &m, 3.5);
        assert!((labels[7].z - 364.23).abs() < 1e-9);
        assert_eq!(labels.iter().filter(|l| l.is_outlier).count(), 1);
        let r = m2_outliers(&it, &m, 3.5);
        assert_eq!(r.score, Score::Value(0.875));
        assert_eq!((r.numerator_count, r.denominator_count), (1, 8));

        let it = [60.0; 5];
        assert_eq!(m2_outliers(&it, &model(&it), 3.5).score, Score::Value(1.0));

        let mut it = vec![60.0; 9];
        it.push(600.0);
        let m = model(&it);
        assert_eq!(m.mad, 0.0);
        assert_eq!(m.fallback_mean_ad, Some(54.0));
        let z = modified_z(600.0, &m);
        assert!((z - 0.7979 * 540.0 / 54.0).abs() < 1e-12);
        assert_eq!(m2_outliers(&it, &m, 3.5).score, Score::Value(0.9));
    }

    fn pk(id: &str, t: i64, v: i64) -> DataPacket {
        let mut a = BTreeMap::new();
        a.insert(Arc::<str>::from("v"), Value::Int(v));
        DataPacket::new(id, t, a).unwrap()
    }

    #[test]
    fn m3_examples() {
        let distinct: Vec<_> = (0..10).map(|i| pk("a", i * 1000, 0)).collect();
        assert_eq!(
            m3_duplicates(&distinct, DuplicateKey::IdTimestamp).score,
            Score::Value(1.0)
        );

        let mut ten: Vec<_> = (0..8).map(|i| pk("a", i * 1000, 0)).collect();
        ten.push(pk("a", 3000, 0));
        ten.push(pk("a", 3000, 0));
        let r = m3_duplicates(&ten, DuplicateKey::IdTimestamp);
        assert_eq!(r.score, Score::Value(0.8));
        assert_eq!(r.numerator_count, 2);

        let three = vec![pk("a", 0, 1); 3];
        let r = m3_duplicates(&three, DuplicateKey::FullPacket);
        assert_eq!(r.score, Score::Value(1.0 - 2.0 / 3.0));
        assert_eq!(
            m3_duplicates(&[], DuplicateKey::FullPacket).score,
            Score::Inapplicable
        );
    }

    #[test]
    fn duplicate_key_modes_differ() {
        let ps = vec![pk("a", 0, 1), pk("a", 0, 2), pk("b", 0, 1)];
        assert_eq!(
            m3_duplicates(&ps, DuplicateKey::IdTimestamp).numerator_count,
            1
        );
        assert_eq!(
            m3_duplicates(&ps, DuplicateKey::FullPacket).numerator_count,
            0
        );
    }

    #[test]
    fn deduplicated_stream_has_no_zero_iat() {
        let s = SensorStream::new(
            "a".into(),
            vec![
                pk("a", 0, 1),
                pk("a", 60_000, 2),
                pk("a", 60_000, 3),
                pk("a", 120_000, 4),
            ],
        );
        let d = deduplicate(s.clone(), DuplicateKey::IdTimestamp);
        assert_eq!(d.stream.iat_values(), &[60.0, 60.0]);
        assert_eq!(d.duplicates.len(), 1);
        assert_eq!(d.duplicates[0].get("v"), Some(&Value::Int(3)));
        let d = deduplicate(s, DuplicateKey::FullPacket);
        assert_eq!(d.stream.iat_values(), &[60.0, 0.0, 60.0]);
        assert!(d.duplicates.is_empty());
    }

    #[test]
    fn rae_window_is_half_mode_either_side() {
        let mode = 60.0;
        for (x, good) in [(30.0, true), (90.0, true), (29.9, false), (90.1, false)] {
            let mut t = RegularityTerms::default();
            t.add(RaeValue::new(x, mode).rae, 0.5);
            assert_eq!(t.good == 1, good, "{x}");
        }
    }
}
