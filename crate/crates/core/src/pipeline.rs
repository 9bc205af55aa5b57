//! End-to-end assessment: ingestion, schema validation, the six metrics and
//! aggregation into a [`QualityReport`].

use std::io::Read;

use chrono::{DateTime, SecondsFormat};
use thiserror::Error;

use crate::config::{AssessmentConfig, ConfigError};
use crate::ingest::{group_by_sensor, parse_dataset, DatasetFormat, IngestError, IngestFailure};
use crate::metrics::{assess_iats, deduplicate, m4_mandatory, m5_unknown, m6_format};
use crate::model::{Evidence, MetricId, MetricResult, QualityReport};
use crate::report::{aggregate, AggregateError};
use crate::schema::{validate_packet, SchemaDocument};

#[derive(Debug, Error)]
pub enum AssessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestFailure),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
}

impl AssessError {
    /// Whether the dataset itself was refused (as opposed to bad inputs or I/O).
    pub fn is_rejection(&self) -> bool {
        matches!(self, AssessError::Ingest(IngestFailure::Rejected { .. }))
    }
}

#[derive(Debug, Clone)]
pub struct Assessment {
    pub report: QualityReport,
    pub ingest_errors: Vec<IngestError>,
    pub packet_count: usize,
}

fn format_instant(ms: i64) -> String {
    DateTime::from_timestamp_millis(ms)
        .unwrap_or_default()
        .to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Runs the whole assessment over one dataset.
pub fn assess<R: Read>(
    source: R,
    format: DatasetFormat,
    schema: &SchemaDocument,
    config: &AssessmentConfig,
) -> Result<Assessment, AssessError> {
    config.validate()?;
    let parsed = parse_dataset(source, format, config)?;
    let packet_count = parsed.packets.len();
    let latest = parsed.packets.iter().map(|p| p.timestamp_ms).max();

    let envelope = [
        config.sensor_id_field.as_str(),
        config.timestamp_field.as_str(),
    ];
    let verdicts: Vec<_> = parsed
        .packets
        .iter()
        .map(|p| validate_packet(p, schema, config.format_checks, &envelope))
        .collect();
    let m4 = m4_mandatory(&verdicts);
    let m5 = m5_unknown(&verdicts);
    let m6 = m6_format(&verdicts);
    drop(verdicts);

    let mut streams = Vec::new();
    let mut dup_counts = Vec::new();
    let mut dup_samples = Vec::new();
    let mut duplicates = 0u64;
    for s in group_by_sensor(parsed.packets) {
        let d = deduplicate(s, config.duplicate_key);
        duplicates += d.duplicates.len() as u64;
        dup_counts.push(d.duplicates.len() as u64);
        for p in &d.duplicates {
            if dup_samples.len() < crate::model::EVIDENCE_SAMPLE_LIMIT {
                dup_samples.push(format!("{}@{}", p.sensor_id, p.timestamp_ms));
            }
        }
        streams.push(d.stream);
    }
    let m3 = MetricResult::ratio(
        MetricId::M3,
        duplicates,
        packet_count as u64,
        Evidence::Duplicates {
            samples: dup_samples,
        },
    );
    let iat = assess_iats(&streams, &dup_counts, config);

    let mut report = aggregate(vec![iat.m1, iat.m2, m3, m4, m5, m6], &config.weights)?;
    report.dataset_fingerprint = parsed.fingerprint;
    report.created_at = match &config.created_at {
        Some(c) => c.clone(),
        None => format_instant(latest.unwrap_or(0)),
    };
    report.per_sensor = Some(iat.per_sensor);
    report.canonicalize();

    Ok(Assessment {
        report,
        ingest_errors: parsed.errors,
        packet_count,
    })
}
