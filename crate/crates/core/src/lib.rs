//! Data quality assessment for IoT sensor datasets.
//!
//! Six metrics cover timeliness (inter-arrival regularity and outliers),
//! completeness (duplicates, missing mandatory attributes) and conformity
//! (unknown attributes, format errors). [`assess`] runs the whole pipeline
//! and produces a [`QualityReport`].

pub mod config;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod schema;
pub mod synthgen;

pub use config::{AssessmentConfig, ConfigError, DuplicateKey, FormatChecks, ModeScope};
pub use ingest::{parse_dataset, DatasetFormat, IngestError, IngestFailure, ParsedDataset};
pub use model::{
    registry, DataPacket, Dimension, Evidence, IatModel, MetricId, MetricResult, QualityReport,
    Score, SensorStream, Value,
};
pub use pipeline::{assess, AssessError, Assessment};
pub use report::{
    aggregate, deserialize_report, report_digest, serialize_report, weighted_score, AggregateError,
};
pub use schema::{parse_schema, validate_packet, SchemaDocument, SchemaError};
pub use synthgen::{generate, iat_histogram, GenError, GenSpec, GeneratedDataset, GroundTruth};
