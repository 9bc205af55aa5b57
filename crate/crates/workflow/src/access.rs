//! Roles, scopes and bearer tokens of the proxy resource server.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::sealed::ContentKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Assessee,
    Assessor,
    Enclave,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Assessee, Role::Assessor, Role::Enclave];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Assessee => "assessee",
            Role::Assessor => "assessor",
            Role::Enclave => "enclave",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown role `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    Object(ContentKind),
    /// The queue of assessment requests: put enqueues, get claims.
    AssessmentRequest,
    /// Status of an assessment: get reads it, put marks it failed.
    Status,
    Attestation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Permission {
    Put,
    Get,
    List,
}

pub type Grant = (Resource, Permission);

/// The fixed grants of each role.
pub fn scope_of(role: Role) -> BTreeSet<Grant> {
    use ContentKind::*;
    use Permission::*;
    use Resource::*;
    let grants: &[Grant] = match role {
        Role::Assessee => &[
            (Object(Dataset), Put),
            (Object(Schema), Put),
            (Object(Report), Get),
            (Attestation, Get),
        ],
        Role::Assessor => &[
            (Object(Config), Put),
            (AssessmentRequest, Put),
            (Status, Get),
            (Object(Dataset), List),
            (Object(Schema), List),
            (Attestation, Get),
        ],
        Role::Enclave => &[
            (Object(Dataset), Get),
            (Object(Schema), Get),
            (Object(Config), Get),
            (Object(Report), Put),
            (Attestation, Put),
            (AssessmentRequest, Get),
            (Status, Put),
        ],
    };
    grants.iter().copied().collect()
}

pub fn permits(role: Role, grant: Grant) -> bool {
    scope_of(role).contains(&grant)
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessToken {
    pub token: String,
    pub principal: Role,
    /// Unix seconds.
    pub expires_at: u64,
}

impl AccessToken {
    pub fn issue(principal: Role, ttl: Duration) -> Self {
        let mut raw = [0u8; 32];
        OsRng.fill_bytes(&mut raw);
        Self {
            token: hex::encode(raw),
            principal,
            expires_at: unix_now().saturating_add(ttl.as_secs()),
        }
    }

    pub fn is_expired(&self) -> bool {
        unix_now() >= self.expires_at
    }

    pub fn scope(&self) -> BTreeSet<Grant> {
        scope_of(self.principal)
    }
}

impl fmt::Debug for AccessToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AccessToken")
            .field("principal", &self.principal)
            .field("expires_at", &self.expires_at)
            .finish_non_exhaustive()
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Constant-time comparison for token strings.
pub(crate) fn token_eq(a: &str, b: &str) -> bool {
    a.len() == b.len()
        && a.bytes()
            .zip(b.bytes())
            .fold(0u8, |acc, (x, y)| acc | (x ^ y))
            == 0
}
