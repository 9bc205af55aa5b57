//! Python bindings: local assessment, the synthetic generator and the sealed
//! envelope format used by the remote workflow.

use pyo3::create_exception;
use pyo3::exceptions::{PyTypeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use dq_core::synthgen::DEFAULT_SCHEMA;
use dq_core::{
    deserialize_report, report_digest, serialize_report, AssessmentConfig, DatasetFormat, GenSpec,
    MetricId, QualityReport, SchemaDocument,
};
use dq_workflow::ContentKind;

create_exception!(
    dqpy,
    DatasetRejected,
    PyValueError,
    "The dataset was refused at ingestion."
);

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Accepts `bytes` or `str`.
fn input_bytes(obj: &Bound<'_, PyAny>) -> PyResult<Vec<u8>> {
    if let Ok(b) = obj.cast::<PyBytes>() {
        return Ok(b.as_bytes().to_vec());
    }
    if let Ok(s) = obj.extract::<String>() {
        return Ok(s.into_bytes());
    }
    Err(PyTypeError::new_err("expected bytes or str"))
}

#[pyclass(module = "dqpy", frozen)]
struct Schema {
    inner: SchemaDocument,
}

#[pymethods]
impl Schema {
    #[new]
    fn new(source: &Bound<'_, PyAny>) -> PyResult<Self> {
        let inner = dq_core::parse_schema(&input_bytes(source)?).map_err(value_error)?;
        Ok(Self { inner })
    }

    /// The schema the generator writes packets against.
    #[staticmethod]
    fn builtin() -> Self {
        Self {
            inner: dq_core::parse_schema(DEFAULT_SCHEMA.as_bytes()).expect("builtin schema parses"),
        }
    }

    #[staticmethod]
    fn builtin_source() -> &'static str {
        DEFAULT_SCHEMA
    }
}

#[pyclass(module = "dqpy", frozen)]
struct Report {
    inner: QualityReport,
}

#[pymethods]
impl Report {
    #[staticmethod]
    fn from_json(source: &Bound<'_, PyAny>) -> PyResult<Self> {
        let inner = deserialize_report(&input_bytes(source)?).map_err(value_error)?;
        Ok(Self { inner })
    }

    /// Canonical JSON, byte-identical to the command-line output.
    fn to_json(&self) -> String {
        String::from_utf8(serialize_report(&self.inner)).expect("reports are UTF-8")
    }

    /// SHA-256 of the canonical JSON.
    fn digest(&self) -> String {
        report_digest(&self.inner)
    }

    #[getter]
    fn aggregate_score(&self) -> f64 {
        self.inner.aggregate_score
    }

    #[getter]
    fn created_at(&self) -> &str {
        &self.inner.created_at
    }

    #[getter]
    fn dataset_fingerprint(&self) -> &str {
        &self.inner.dataset_fingerprint
    }

    /// Metric id to score; `None` marks an inapplicable metric.
    #[getter]
    fn scores(&self) -> Vec<(String, Option<f64>)> {
        self.inner
            .per_metric
            .iter()
            .map(|m| (m.metric_id.to_string(), m.score.value()))
            .collect()
    }

    fn score(&self, metric: &str) -> PyResult<Option<f64>> {
        let id: MetricId = metric.parse().map_err(PyValueError::new_err)?;
        Ok(self.inner.score(id).and_then(|s| s.value()))
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "Report(aggregate_score={}, created_at={:?})",
            self.inner.aggregate_score, self.inner.created_at
        )
    }
}

/// Assesses one dataset. `config` is the JSON configuration document.
#[pyfunction]
#[pyo3(signature = (data, schema, config=None, format="ndjson"))]
fn assess(
    py: Python<'_>,
    data: &Bound<'_, PyAny>,
    schema: &Schema,
    config: Option<&str>,
    format: &str,
) -> PyResult<Report> {
    let data = input_bytes(data)?;
    let format: DatasetFormat = format.parse().map_err(value_error)?;
    let config = match config {
        Some(c) => AssessmentConfig::from_json(c.as_bytes()).map_err(value_error)?,
        None => AssessmentConfig::default(),
    };
    let result = py.detach(|| dq_core::assess(data.as_slice(), format, &schema.inner, &config));
    match result {
        Ok(a) => Ok(Report { inner: a.report }),
        Err(e) if e.is_rejection() => Err(DatasetRejected::new_err(e.to_string())),
        Err(e) => Err(value_error(e)),
    }
}

/// Generates a synthetic dataset from a JSON spec. Returns the NDJSON bytes,
/// the ground truth as JSON and the configuration the truth assumes.
#[pyfunction]
#[pyo3(signature = (spec, schema=None))]
fn generate<'py>(
    py: Python<'py>,
    spec: &str,
    schema: Option<&Schema>,
) -> PyResult<(Bound<'py, PyBytes>, String, String)> {
    let spec: GenSpec = serde_json::from_str(spec).map_err(value_error)?;
    let builtin;
    let schema = match schema {
        Some(s) => &s.inner,
        None => {
            builtin = Schema::builtin();
            &builtin.inner
        }
    };
    let g = py
        .detach(|| dq_core::generate(&spec, schema))
        .map_err(value_error)?;
    let truth = serde_json::to_string(&g.truth).map_err(value_error)?;
    let config = serde_json::to_string(&spec.recommended_config()).map_err(value_error)?;
    Ok((PyBytes::new(py, &g.data), truth, config))
}

/// Bin centre and count for every non-empty bin of width `bin_width`.
#[pyfunction]
fn iat_histogram(iats: Vec<f64>, bin_width: f64) -> PyResult<Vec<(f64, usize)>> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(PyValueError::new_err("bin_width must be positive"));
    }
    Ok(dq_core::iat_histogram(&iats, bin_width))
}

/// (metric id, dimension, description) for each metric.
#[pyfunction]
fn registry() -> Vec<(String, String, &'static str)> {
    dq_core::registry()
        .into_iter()
        .map(|e| (e.metric.to_string(), e.dimension.to_string(), e.description))
        .collect()
}

#[pyclass(module = "dqpy", frozen)]
struct KeyPair {
    inner: dq_workflow::KeyPair,
}

#[pymethods]
impl KeyPair {
    #[staticmethod]
    fn generate() -> Self {
        Self {
            inner: dq_workflow::KeyPair::generate(),
        }
    }

    #[staticmethod]
    fn from_secret_hex(secret: &str) -> PyResult<Self> {
        let inner = dq_workflow::KeyPair::from_secret_hex(secret).map_err(value_error)?;
        Ok(Self { inner })
    }

    #[getter]
    fn public_hex(&self) -> String {
        self.inner.public_hex()
    }

    #[getter]
    fn key_id(&self) -> String {
        self.inner.key_id().to_string()
    }

    fn __repr__(&self) -> String {
        format!("KeyPair(key_id={})", self.inner.key_id())
    }
}

/// Seals `plaintext` to the holder of `recipient_public_hex`.
#[pyfunction]
#[pyo3(signature = (plaintext, kind, recipient_public_hex, sender=None))]
fn seal<'py>(
    py: Python<'py>,
    plaintext: &Bound<'_, PyAny>,
    kind: &str,
    recipient_public_hex: &str,
    sender: Option<&KeyPair>,
) -> PyResult<Bound<'py, PyBytes>> {
    let kind: ContentKind = kind.parse().map_err(PyValueError::new_err)?;
    let recipient =
        dq_workflow::sealed::public_key_from_hex(recipient_public_hex).map_err(value_error)?;
    let sender = sender.map_or(dq_workflow::KeyId([0; 8]), |k| k.inner.key_id());
    let envelope = dq_workflow::seal(&input_bytes(plaintext)?, kind, &recipient, sender);
    Ok(PyBytes::new(py, &envelope))
}

/// Opens an envelope addressed to `keys`. Returns (content kind, plaintext).
#[pyfunction]
fn open<'py>(
    py: Python<'py>,
    envelope: &[u8],
    keys: &KeyPair,
) -> PyResult<(String, Bound<'py, PyBytes>)> {
    let (header, plain) = dq_workflow::open(envelope, &keys.inner).map_err(value_error)?;
    Ok((header.kind.to_string(), PyBytes::new(py, &plain)))
}

#[pymodule]
fn dqpy(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DatasetRejected", m.py().get_type::<DatasetRejected>())?;
    m.add_class::<Schema>()?;
    m.add_class::<Report>()?;
    m.add_class::<KeyPair>()?;
    m.add_function(wrap_pyfunction!(assess, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(iat_histogram, m)?)?;
    m.add_function(wrap_pyfunction!(registry, m)?)?;
    m.add_function(wrap_pyfunction!(seal, m)?)?;
    m.add_function(wrap_pyfunction!(open, m)?)?;
    Ok(())
}
