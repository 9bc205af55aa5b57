//! Dataset parsing: NDJSON, CSV and JSON arrays of objects into validated
//! [`DataPacket`]s, and grouping of packets into per-sensor streams.
//!
//! Records are processed one at a time; only the resulting packets are kept
//! in memory. Every record yields either a packet or an [`IngestError`], and
//! a dataset with more than half of its records malformed is rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use chrono::DateTime;
use serde::de::{Deserializer as _, SeqAccess, Visitor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::AssessmentConfig;
use crate::model::{DataPacket, SensorStream, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    #[default]
    Ndjson,
    Csv,
    #[serde(alias = "json")]
    JsonArray,
}

impl FromStr for DatasetFormat {
    type Err = IngestFailure;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ndjson" | "jsonl" => Ok(Self::Ndjson),
            "csv" => Ok(Self::Csv),
            "json" | "json_array" => Ok(Self::JsonArray),
            _ => Err(IngestFailure::UnknownFormat(s.to_string())),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ndjson => "ndjson",
            Self::Csv => "csv",
            Self::JsonArray => "json",
        })
    }
}

/// A record that could not be turned into a packet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestError {
    /// Zero-based record index (data rows for CSV, non-blank lines for NDJSON).
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum IngestFailure {
    #[error("unreadable source: {0}")]
    Unreadable(String),
    #[error("unknown dataset format `{0}`")]
    UnknownFormat(String),
    #[error("dataset rejected: {malformed} of {total} records are malformed")]
    Rejected { malformed: usize, total: usize },
}

impl From<io::Error> for IngestFailure {
    fn from(e: io::Error) -> Self {
        IngestFailure::Unreadable(e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct ParsedDataset {
    pub packets: Vec<DataPacket>,
    pub errors: Vec<IngestError>,
    /// Hex SHA-256 of the raw source bytes.
    pub fingerprint: String,
}

impl ParsedDataset {
    pub fn record_count(&self) -> usize {
        self.packets.len() + self.errors.len()
    }
}

struct HashingReader<R> {
    inner: R,
    hasher: Sha256,
}

impl<R: Read> Read for HashingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }
}

/// Interns attribute names so a million packets share one allocation per key.
#[derive(Default)]
struct Interner(BTreeMap<String, Arc<str>>);

impl Interner {
    fn get(&mut self, s: &str) -> Arc<str> {
        if let Some(a) = self.0.get(s) {
            return a.clone();
        }
        let a: Arc<str> = Arc::from(s);
        self.0.insert(s.to_string(), a.clone());
        a
    }
}

struct RecordBuilder<'a> {
    config: &'a AssessmentConfig,
    keys: Interner,
    sensors: Interner,
    packets: Vec<DataPacket>,
    errors: Vec<IngestError>,
    next_index: usize,
}

impl<'a> RecordBuilder<'a> {
    fn new(config: &'a AssessmentConfig) -> Self {
        Self {
            config,
            keys: Interner::default(),
            sensors: Interner::default(),
            packets: Vec::new(),
            errors: Vec::new(),
            next_index: 0,
        }
    }

    fn fail(&mut self, reason: impl Into<String>) {
        let index = self.next_index;
        self.next_index += 1;
        self.errors.push(IngestError {
            index,
            reason: reason.into(),
        });
    }

    fn push_json(&mut self, record: serde_json::Value) {
        let serde_json::Value::Object(map) = record else {
            self.fail("record is not a JSON object");
            return;
        };
        let mut attributes = BTreeMap::new();
        for (k, v) in map {
            flatten_into(&mut self.keys, &mut attributes, k, v);
        }
        self.push_attributes(attributes);
    }

    fn push_attributes(&mut self, attributes: BTreeMap<Arc<str>, Value>) {
        match self.envelope(&attributes) {
            Ok((sensor_id, timestamp_ms)) => {
                let sensor_id = self.sensors.get(&sensor_id);
                self.next_index += 1;
                self.packets.push(DataPacket {
                    sensor_id,
                    timestamp_ms,
                    attributes,
                });
            }
            Err(reason) => self.fail(reason),
        }
    }

    fn envelope(&self, attributes: &BTreeMap<Arc<str>, Value>) -> Result<(String, i64), String> {
        let ts_field = self.config.timestamp_field.as_str();
        let id_field = self.config.sensor_id_field.as_str();
        let sensor_id = match attributes.get(id_field) {
            None => return Err(format!("missing sensor id field `{id_field}`")),
            Some(Value::Str(s)) if !s.is_empty() => s.clone(),
            Some(Value::Int(i)) => i.to_string(),
            Some(Value::Str(_)) => return Err(format!("empty sensor id in `{id_field}`")),
            Some(other) => {
                return Err(format!(
                    "sensor id field `{id_field}` has unsupported type {}",
                    other.type_name()
                ))
            }
        };
        let ts = match attributes.get(ts_field) {
            None => return Err(format!("missing timestamp field `{ts_field}`")),
            Some(v) => parse_timestamp(v).map_err(|e| format!("field `{ts_field}`: {e}"))?,
        };
        Ok((sensor_id, ts))
    }

    fn finish(self, fingerprint: String) -> Result<ParsedDataset, IngestFailure> {
        let total = self.packets.len() + self.errors.len();
        let malformed = self.errors.len();
        if malformed * 2 > total {
            return Err(IngestFailure::Rejected { malformed, total });
        }
        Ok(ParsedDataset {
            packets: self.packets,
            errors: self.errors,
            fingerprint,
        })
    }
}

fn flatten_into(
    keys: &mut Interner,
    out: &mut BTreeMap<Arc<str>, Value>,
    name: String,
    v: serde_json::Value,
) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, child) in map {
                flatten_into(keys, out, format!("{name}.{k}"), child);
            }
        }
        serde_json::Value::Array(items) => {
            for (i, child) in items.into_iter().enumerate() {
                flatten_into(keys, out, format!("{name}.{i}"), child);
            }
        }
        scalar => {
            out.insert(keys.get(&name), json_scalar(scalar));
        }
    }
}

fn json_scalar(v: serde_json::Value) -> Value {
    match v {
        serde_json::Value::Null => Value::Null,
        serde_json::Value::Bool(b) => Value::Bool(b),
        serde_json::Value::Number(n) => match n.as_i64() {
            Some(i) => Value::Int(i),
            None => Value::Float(n.as_f64().unwrap_or(f64::NAN)),
        },
        serde_json::Value::String(s) => Value::Str(s),
        serde_json::Value::Array(_) | serde_json::Value::Object(_) => {
            unreachable!("composite values are flattened")
        }
    }
}

/// Accepts RFC 3339 strings or integer epoch milliseconds.
pub fn parse_timestamp(v: &Value) -> Result<i64, String> {
    match v {
        Value::Int(ms) => Ok(*ms),
        Value::Str(s) => DateTime::parse_from_rfc3339(s)
            .map(|dt| dt.timestamp_millis())
            .map_err(|e| format!("`{s}` is not an RFC 3339 timestamp ({e})")),
        other => Err(format!(
            "expected RFC 3339 string or epoch milliseconds, got {}",
            other.type_name()
        )),
    }
}

fn csv_cell(s: &str) -> Value {
    if s.is_empty() {
        return Value::Null;
    }
    match s {
        "true" => return Value::Bool(true),
        "false" => return Value::Bool(false),
        _ => {}
    }
    if let Ok(i) = s.parse::<i64>() {
        return Value::Int(i);
    }
    match s.parse::<f64>() {
        Ok(f) if f.is_finite() => Value::Float(f),
        _ => Value::Str(s.to_string()),
    }
}

/// Parses a dataset into packets and per-record errors.
pub fn parse_dataset<R: Read>(
    source: R,
    format: DatasetFormat,
    config: &AssessmentConfig,
) -> Result<ParsedDataset, IngestFailure> {
    let mut reader = HashingReader {
        inner: source,
        hasher: Sha256::new(),
    };
    let mut builder = RecordBuilder::new(config);
    match format {
        DatasetFormat::Ndjson => read_ndjson(&mut reader, &mut builder)?,
        DatasetFormat::Csv => read_csv(&mut reader, &mut builder)?,
        DatasetFormat::JsonArray => read_json_array(&mut reader, &mut builder)?,
    }
    // Drain anything the format reader left unread so the fingerprint covers the whole source.
    io::copy(&mut reader, &mut io::sink())?;
    let fingerprint = hex::encode(reader.hasher.finalize());
    builder.finish(fingerprint)
}

fn read_ndjson<R: Read>(reader: R, builder: &mut RecordBuilder<'_>) -> Result<(), IngestFailure> {
    let mut buf = BufReader::with_capacity(1 << 16, reader);
    let mut line = String::new();
    loop {
        line.clear();
        if buf.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match serde_json::from_str::<serde_json::Value>(trimmed) {
            Ok(v) => builder.push_json(v),
            Err(e) => builder.fail(format!("invalid JSON: {e}")),
        }
    }
}

fn read_csv<R: Read>(reader: R, builder: &mut RecordBuilder<'_>) -> Result<(), IngestFailure> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers: Vec<Arc<str>> = rdr
        .headers()
        .map_err(|e| IngestFailure::Unreadable(format!("CSV header: {e}")))?
        .iter()
        .map(|h| builder.keys.get(h))
        .collect();
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => return Ok(()),
            Ok(true) => {
                let attributes = headers
                    .iter()
                    .zip(record.iter())
                    .map(|(h, cell)| (h.clone(), csv_cell(cell)))
                    .collect();
                builder.push_attributes(attributes);
            }
            Err(e) => match e.kind() {
                csv::ErrorKind::UnequalLengths { .. } | csv::ErrorKind::Utf8 { .. } => {
                    builder.fail(format!("malformed CSV row: {e}"))
                }
                _ => return Err(IngestFailure::Unreadable(e.to_string())),
            },
        }
    }
}

fn read_json_array<R: Read>(
    reader: R,
    builder: &mut RecordBuilder<'_>,
) -> Result<(), IngestFailure> {
    struct Records<'b, 'c>(&'b mut RecordBuilder<'c>);

    impl<'de> Visitor<'de> for Records<'_, '_> {
        type Value = ();

        fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("a JSON array of records")
        }

        fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<(), A::Error> {
            while let Some(v) = seq.next_element::<serde_json::Value>()? {
                self.0.push_json(v);
            }
            Ok(())
        }
    }

    let mut de = serde_json::Deserializer::from_reader(BufReader::with_capacity(1 << 16, reader));
    (&mut de)
        .deserialize_seq(Records(builder))
        .and_then(|_| de.end())
        .map_err(|e| IngestFailure::Unreadable(format!("JSON array: {e}")))
}

/// Writes packets as NDJSON, one flattened object per line.
pub fn write_ndjson<W: Write>(packets: &[DataPacket], mut out: W) -> io::Result<()> {
    for p in packets {
        let obj: serde_json::Map<String, serde_json::Value> = p
            .attributes
            .iter()
            .map(|(k, v)| (k.to_string(), serde_json::Value::from(v)))
            .collect();
        serde_json::to_writer(&mut out, &obj)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Splits packets into one time-sorted stream per sensor, ordered by sensor id.
/// Packets with equal timestamps keep their input order.
pub fn group_by_sensor(packets: Vec<DataPacket>) -> Vec<SensorStream> {
    let mut by_sensor: BTreeMap<Arc<str>, Vec<DataPacket>> = BTreeMap::new();
    for p in packets {
        by_sensor.entry(p.sensor_id.clone()).or_default().push(p);
    }
    by_sensor
        .into_iter()
        .map(|(id, ps)| SensorStream::new(id, ps))
        .collect()
}

/// Inter-arrival times of a sorted stream, in seconds.
pub fn compute_iats(stream: &SensorStream) -> Vec<f64> {
    stream.iat_values().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> AssessmentConfig {
        AssessmentConfig {
            timestamp_field: "ts".into(),
            sensor_id_field: "id".into(),
            ..Default::default()
        }
    }

    fn parse(s: &str, f: DatasetFormat) -> Result<ParsedDataset, IngestFailure> {
        parse_dataset(s.as_bytes(), f, &cfg())
    }

    #[test]
    fn ndjson_all_valid() {
        let d = parse(
            "{\"id\":\"a\",\"ts\":0,\"pm25\":1.5}\n{\"id\":\"a\",\"ts\":60000}\n\n{\"id\":\"b\",\"ts\":\"2024-01-01T00:00:00Z\"}\n",
            DatasetFormat::Ndjson,
        )
        .unwrap();
        assert_eq!(d.packets.len(), 3);
        assert!(d.errors.is_empty());
        assert_eq!(d.packets[2].timestamp_ms, 1_704_067_200_000);
        assert_eq!(d.packets[0].get("pm25"), Some(&Value::Float(1.5)));
        assert_eq!(d.fingerprint.len(), 64);
    }

    #[test]
    fn missing_timestamp_is_reported() {
        let d = parse(
            "{\"id\":\"a\",\"ts\":0}\n{\"id\":\"a\"}\n{\"id\":\"a\",\"ts\":1}\n",
            DatasetFormat::Ndjson,
        )
        .unwrap();
        assert_eq!(d.packets.len(), 2);
        assert_eq!(d.errors.len(), 1);
        assert_eq!(d.errors[0].index, 1);
        assert!(d.errors[0].reason.contains("missing timestamp"));
    }

    #[test]
    fn csv_header_and_numeric_inference() {
        let d = parse("id,ts,pm25\ns1,0,41.2\ns1,60000,40\n", DatasetFormat::Csv).unwrap();
        assert_eq!(d.packets.len(), 2);
        assert_eq!(d.packets[0].get("pm25"), Some(&Value::Float(41.2)));
        assert_eq!(d.packets[1].get("pm25"), Some(&Value::Int(40)));
        assert_eq!(&*d.packets[1].sensor_id, "s1");
        assert_eq!(d.packets[1].timestamp_ms, 60_000);
    }

    #[test]
    fn csv_quoting_and_short_rows() {
        let d = parse(
            "id,ts,note\n\"s,1\",0,\"a \"\"q\"\"\"\ns2,1\ns3,2,\n",
            DatasetFormat::Csv,
        )
        .unwrap();
        assert_eq!(d.packets.len(), 2);
        assert_eq!(&*d.packets[0].sensor_id, "s,1");
        assert_eq!(
            d.packets[0].get("note"),
            Some(&Value::Str("a \"q\"".into()))
        );
        assert_eq!(d.packets[1].get("note"), Some(&Value::Null));
        assert_eq!(d.errors[0].index, 1);
    }

    #[test]
    fn json_array_and_flattening() {
        let d = parse(
            r#"[{"id":"a","ts":5,"loc":{"lat":1.0,"lon":2},"tags":["x"]}, 3]"#,
            DatasetFormat::JsonArray,
        )
        .unwrap();
        assert_eq!(d.packets.len(), 1);
        assert_eq!(d.errors.len(), 1);
        let p = &d.packets[0];
        assert_eq!(p.get("loc.lat"), Some(&Value::Float(1.0)));
        assert_eq!(p.get("loc.lon"), Some(&Value::Int(2)));
        assert_eq!(p.get("tags.0"), Some(&Value::Str("x".into())));
    }

    #[test]
    fn json_array_malformed_document() {
        assert!(matches!(
            parse("[{\"id\":1,", DatasetFormat::JsonArray),
            Err(IngestFailure::Unreadable(_))
        ));
        assert!(matches!(
            parse("{}", DatasetFormat::JsonArray),
            Err(IngestFailure::Unreadable(_))
        ));
    }

    #[test]
    fn majority_malformed_rejected() {
        let r = parse(
            "{\"id\":\"a\",\"ts\":0}\nnot json\n{\"ts\":3}\n",
            DatasetFormat::Ndjson,
        );
        assert!(matches!(
            r,
            Err(IngestFailure::Rejected {
                malformed: 2,
                total: 3
            })
        ));
        // Exactly half is tolerated.
        assert!(parse("{\"id\":\"a\",\"ts\":0}\nnope\n", DatasetFormat::Ndjson).is_ok());
    }

    #[test]
    fn bad_envelope_values() {
        let d = parse(
            "{\"id\":\"\",\"ts\":0}\n{\"id\":true,\"ts\":0}\n{\"id\":7,\"ts\":1.5}\n{\"id\":7,\"ts\":\"yesterday\"}\n{\"id\":7,\"ts\":0}\n{\"id\":7,\"ts\":0}\n{\"id\":7,\"ts\":0}\n{\"id\":7,\"ts\":0}\n",
            DatasetFormat::Ndjson,
        )
        .unwrap();
        assert_eq!(d.errors.len(), 4);
        assert_eq!(&*d.packets[0].sensor_id, "7");
    }

    #[test]
    fn unknown_format() {
        assert!(matches!(
            "parquet".parse::<DatasetFormat>(),
            Err(IngestFailure::UnknownFormat(_))
        ));
        assert_eq!(
            "json".parse::<DatasetFormat>().unwrap(),
            DatasetFormat::JsonArray
        );
    }

    #[test]
    fn grouping() {
        let d = parse(
            "{\"id\":\"a\",\"ts\":180000,\"k\":1}\n{\"id\":\"b\",\"ts\":0}\n{\"id\":\"a\",\"ts\":0}\n{\"id\":\"a\",\"ts\":180000,\"k\":2}\n{\"id\":\"a\",\"ts\":60000}\n",
            DatasetFormat::Ndjson,
        )
        .unwrap();
        let streams = group_by_sensor(d.packets);
        assert_eq!(streams.len(), 2);
        assert_eq!(streams[0].sensor_id(), "a");
        let ts: Vec<i64> = streams[0]
            .packets()
            .iter()
            .map(|p| p.timestamp_ms)
            .collect();
        assert_eq!(ts, [0, 60_000, 180_000, 180_000]);
        // stable order on ties
        assert_eq!(streams[0].packets()[2].get("k"), Some(&Value::Int(1)));
        assert_eq!(compute_iats(&streams[0]), vec![60.0, 120.0, 0.0]);
        assert!(group_by_sensor(Vec::new()).is_empty());
    }

    #[test]
    fn iat_arithmetic() {
        let d = parse(
            "{\"id\":\"a\",\"ts\":0}\n{\"id\":\"a\",\"ts\":59700}\n{\"id\":\"a\",\"ts\":120100}\n",
            DatasetFormat::Ndjson,
        )
        .unwrap();
        let s = group_by_sensor(d.packets);
        assert_eq!(compute_iats(&s[0]), vec![59.7, 60.4]);
    }
}
