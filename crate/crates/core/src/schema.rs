//! Declarative schema documents and per-packet validation.
//!
//! The accepted syntax is a subset of JSON Schema: top-level `properties`
//! and `required`, and per-property `type`, `minimum`, `maximum` and
//! `pattern`. Other keywords are ignored and reported as warnings.

use std::collections::{BTreeMap, BTreeSet};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::FormatChecks;
use crate::model::{DataPacket, Value};

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("malformed schema JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema root must be a JSON object")]
    NotAnObject,
    #[error("`{0}` must be {1}")]
    Shape(String, &'static str),
    #[error("required attribute `{0}` is not declared in properties")]
    UndeclaredMandatory(String),
    #[error("attribute `{0}`: unsupported type `{1}`")]
    UnsupportedType(String, String),
    #[error("attribute `{0}`: minimum {1} exceeds maximum {2}")]
    BadRange(String, f64, f64),
    #[error("attribute `{0}`: {1} only applies to {2} attributes")]
    MisplacedConstraint(String, &'static str, &'static str),
    #[error("attribute `{0}`: invalid pattern: {1}")]
    BadPattern(String, regex::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeclaredType {
    Integer,
    Float,
    String,
    Boolean,
}

impl DeclaredType {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "integer" => Some(Self::Integer),
            "number" | "float" => Some(Self::Float),
            "string" => Some(Self::String),
            "boolean" => Some(Self::Boolean),
            _ => None,
        }
    }

    /// Integers are accepted where floats are declared, never the reverse.
    pub fn accepts(self, v: &Value) -> bool {
        matches!(
            (self, v),
            (Self::Integer, Value::Int(_))
                | (Self::Float, Value::Int(_) | Value::Float(_))
                | (Self::String, Value::Str(_))
                | (Self::Boolean, Value::Bool(_))
        )
    }

    fn is_numeric(self) -> bool {
        matches!(self, Self::Integer | Self::Float)
    }
}

#[derive(Debug, Clone)]
pub struct AttributeSpec {
    pub declared_type: DeclaredType,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub pattern: Option<Regex>,
}

#[derive(Debug, Clone, Default)]
pub struct SchemaDocument {
    pub attributes: BTreeMap<String, AttributeSpec>,
    pub mandatory: BTreeSet<String>,
    /// Ignored keywords, as `path: keyword`.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    MissingMandatory,
    Unknown,
    WrongType,
    OutOfRange,
    PatternMismatch,
}

impl ViolationKind {
    pub fn is_format(self) -> bool {
        matches!(
            self,
            Self::WrongType | Self::OutOfRange | Self::PatternMismatch
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PacketVerdict {
    pub missing_mandatory: bool,
    pub has_unknown: bool,
    pub has_format_error: bool,
    pub detail: Vec<(String, ViolationKind)>,
}

impl PacketVerdict {
    pub fn from_detail(detail: Vec<(String, ViolationKind)>) -> Self {
        Self {
            missing_mandatory: detail
                .iter()
                .any(|(_, k)| *k == ViolationKind::MissingMandatory),
            has_unknown: detail.iter().any(|(_, k)| *k == ViolationKind::Unknown),
            has_format_error: detail.iter().any(|(_, k)| k.is_format()),
            detail,
        }
    }

    pub fn is_clean(&self) -> bool {
        self.detail.is_empty()
    }
}

fn number(path: &str, v: &serde_json::Value) -> Result<f64, SchemaError> {
    v.as_f64()
        .ok_or_else(|| SchemaError::Shape(path.to_string(), "a number"))
}

/// Parses a schema document from UTF-8 JSON.
pub fn parse_schema(source: &[u8]) -> Result<SchemaDocument, SchemaError> {
    let root: serde_json::Value = serde_json::from_slice(source)?;
    let serde_json::Value::Object(root) = root else {
        return Err(SchemaError::NotAnObject);
    };
    let mut doc = SchemaDocument::default();

    for (key, value) in &root {
        match key.as_str() {
            "properties" => {
                let props = value
                    .as_object()
                    .ok_or_else(|| SchemaError::Shape("properties".into(), "an object"))?;
                for (name, spec) in props {
                    let spec = parse_attribute(name, spec, &mut doc.warnings)?;
                    doc.attributes.insert(name.clone(), spec);
                }
            }
            "required" => {
                let names = value
                    .as_array()
                    .ok_or_else(|| SchemaError::Shape("required".into(), "an array of strings"))?;
                for n in names {
                    let n = n.as_str().ok_or_else(|| {
                        SchemaError::Shape("required".into(), "an array of strings")
                    })?;
                    doc.mandatory.insert(n.to_string());
                }
            }
            // Common annotation keywords carry no constraint.
            "$schema" | "$id" | "title" | "description" | "type" => {}
            other => doc.warnings.push(format!("(root): {other}")),
        }
    }

    if let Some(m) = doc
        .mandatory
        .iter()
        .find(|m| !doc.attributes.contains_key(*m))
    {
        return Err(SchemaError::UndeclaredMandatory(m.clone()));
    }
    for w in &doc.warnings {
        log::warn!("schema keyword ignored: {w}");
    }
    Ok(doc)
}

fn parse_attribute(
    name: &str,
    spec: &serde_json::Value,
    warnings: &mut Vec<String>,
) -> Result<AttributeSpec, SchemaError> {
    let obj = spec
        .as_object()
        .ok_or_else(|| SchemaError::Shape(format!("properties.{name}"), "an object"))?;
    let ty = obj
        .get("type")
        .ok_or_else(|| SchemaError::Shape(format!("properties.{name}.type"), "present"))?;
    let ty_str = ty
        .as_str()
        .ok_or_else(|| SchemaError::Shape(format!("properties.{name}.type"), "a string"))?;
    let declared_type = DeclaredType::parse(ty_str)
        .ok_or_else(|| SchemaError::UnsupportedType(name.to_string(), ty_str.to_string()))?;

    let mut out = AttributeSpec {
        declared_type,
        min: None,
        max: None,
        pattern: None,
    };
    for (key, value) in obj {
        match key.as_str() {
            "type" => {}
            "minimum" => out.min = Some(number(&format!("properties.{name}.minimum"), value)?),
            "maximum" => out.max = Some(number(&format!("properties.{name}.maximum"), value)?),
            "pattern" => {
                let p = value.as_str().ok_or_else(|| {
                    SchemaError::Shape(format!("properties.{name}.pattern"), "a string")
                })?;
                out.pattern =
                    Some(Regex::new(p).map_err(|e| SchemaError::BadPattern(name.to_string(), e))?);
            }
            "description" | "title" | "unit" | "$comment" => {}
            other => warnings.push(format!("properties.{name}: {other}")),
        }
    }

    if (out.min.is_some() || out.max.is_some()) && !declared_type.is_numeric() {
        return Err(SchemaError::MisplacedConstraint(
            name.to_string(),
            "minimum/maximum",
            "numeric",
        ));
    }
    if out.pattern.is_some() && declared_type != DeclaredType::String {
        return Err(SchemaError::MisplacedConstraint(
            name.to_string(),
            "pattern",
            "string",
        ));
    }
    if let (Some(lo), Some(hi)) = (out.min, out.max) {
        if lo > hi {
            return Err(SchemaError::BadRange(name.to_string(), lo, hi));
        }
    }
    Ok(out)
}

impl AttributeSpec {
    fn check(&self, v: &Value, checks: FormatChecks) -> Option<ViolationKind> {
        if !self.declared_type.accepts(v) {
            return Some(ViolationKind::WrongType);
        }
        if checks == FormatChecks::TypesOnly {
            return None;
        }
        if let Some(x) = v.as_f64() {
            let below = self.min.is_some_and(|lo| x < lo);
            let above = self.max.is_some_and(|hi| x > hi);
            if below || above {
                return Some(ViolationKind::OutOfRange);
            }
        }
        if let (Some(re), Value::Str(s)) = (&self.pattern, v) {
            if !re.is_match(s) {
                return Some(ViolationKind::PatternMismatch);
            }
        }
        None
    }
}

/// Validates one packet. `envelope_fields` (the configured sensor id and
/// timestamp fields) never count as unknown attributes.
pub fn validate_packet(
    packet: &DataPacket,
    schema: &SchemaDocument,
    format_checks: FormatChecks,
    envelope_fields: &[&str],
) -> PacketVerdict {
    let mut detail = Vec::new();
    for m in &schema.mandatory {
        if !packet.attributes.contains_key(m.as_str()) {
            detail.push((m.clone(), ViolationKind::MissingMandatory));
        }
    }
    for (name, value) in &packet.attributes {
        match schema.attributes.get(&**name) {
            Some(spec) => {
                if let Some(kind) = spec.check(value, format_checks) {
                    detail.push((name.to_string(), kind));
                }
            }
            None if envelope_fields.contains(&&**name) => {}
            None => detail.push((name.to_string(), ViolationKind::Unknown)),
        }
    }
    PacketVerdict::from_detail(detail)
}
