//! JSON bodies and header names shared by the proxy and its clients.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::access::{AccessToken, Role};
use crate::sealed::{ContentKind, KeyId};

pub const CONTENT_KIND_HEADER: &str = "x-content-kind";
pub const DOMAIN_HEADER: &str = "x-domain";
pub const DATASET_FORMAT_HEADER: &str = "x-dataset-format";
pub const SENDER_KEY_HEADER: &str = "x-sender-public-key";
pub const ASSESSMENT_HEADER: &str = "x-assessment-id";

/// Cleartext metadata kept next to each sealed object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectMeta {
    pub object_id: String,
    pub kind: ContentKind,
    /// Data domain label, e.g. "environment".
    pub domain: Option<String>,
    pub dataset_format: Option<String>,
    pub recipient_key_id: KeyId,
    pub sender_key_id: KeyId,
    /// Hex public key of the sender, kept for datasets so the report can be
    /// sealed back to the assessee.
    pub sender_public_key: Option<String>,
    pub size: u64,
    /// Unix seconds.
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssessmentRequest {
    pub dataset_id: String,
    pub schema_id: String,
    pub config_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssessmentStatus {
    Queued,
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssessmentRecord {
    pub assessment_id: String,
    pub dataset_id: String,
    pub schema_id: String,
    pub config_id: String,
    pub domain: Option<String>,
    pub status: AssessmentStatus,
    pub report_id: Option<String>,
    pub created_at: u64,
}

/// What the enclave receives when it claims queued work.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimedAssessment {
    pub assessment_id: String,
    pub dataset_id: String,
    pub schema_id: String,
    pub config_id: String,
    pub dataset_format: String,
    /// Hex public key the report is sealed to.
    pub report_recipient_key: String,
}

/// Written by the proxy once it is listening.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProxyCredentials {
    pub url: String,
    pub tokens: BTreeMap<Role, AccessToken>,
}

impl ProxyCredentials {
    pub fn token(&self, role: Role) -> &str {
        &self.tokens[&role].token
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
