//! Blocking HTTP client for the proxy, plus the assessee and assessor roles.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use thiserror::Error;
use ureq::Agent;
use zeroize::Zeroizing;

use dq_core::{deserialize_report, AssessmentConfig, DatasetFormat, QualityReport};

use crate::api::*;
use crate::attestation::{AttestationError, AttestationStub};
use crate::sealed::{open, seal, ContentKind, KeyPair, SealError};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("proxy answered {status}: {message}")]
    Http { status: u16, message: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Decode(String),
    #[error(transparent)]
    Attestation(#[from] AttestationError),
    #[error(transparent)]
    Seal(#[from] SealError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("configuration domain {config:?} does not match dataset domain {dataset:?}")]
    DomainMismatch {
        config: Option<String>,
        dataset: Option<String>,
    },
    #[error("report not ready")]
    NotReady,
    #[error("assessment failed")]
    Failed,
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Http { status, .. } => Some(*status),
            _ => None,
        }
    }
}

pub type ClientResult<T> = Result<T, ClientError>;

/// Raw response: status, selected headers and body.
#[derive(Debug, Clone)]
pub struct RawResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl RawResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

/// Copy of everything a client received, for auditing what a party saw.
pub type Transcript = Arc<Mutex<Vec<u8>>>;

#[derive(Clone)]
pub struct ProxyClient {
    base: String,
    token: String,
    agent: Agent,
    transcript: Option<Transcript>,
}

impl std::fmt::Debug for ProxyClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProxyClient")
            .field("base", &self.base)
            .finish_non_exhaustive()
    }
}

impl ProxyClient {
    pub fn new(base: &str, token: &str) -> Self {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self {
            base: base.trim_end_matches('/').to_string(),
            token: token.to_string(),
            agent,
            transcript: None,
        }
    }

    /// Records every response (headers and body) into `t`.
    pub fn with_transcript(mut self, t: Transcript) -> Self {
        self.transcript = Some(t);
        self
    }

    /// Sends a request; `body` of `None` sends no body.
    pub fn raw(
        &self,
        method: &str,
        path: &str,
        headers: &[(&str, &str)],
        body: Option<&[u8]>,
    ) -> ClientResult<RawResponse> {
        let url = format!("{}{}", self.base, path);
        let auth = format!("Bearer {}", self.token);
        let resp = match method {
            "GET" => {
                let mut r = self.agent.get(&url).header("authorization", &auth);
                for (k, v) in headers {
                    r = r.header(*k, *v);
                }
                r.call()
            }
            "PUT" | "POST" => {
                let mut r = if method == "PUT" {
                    self.agent.put(&url)
                } else {
                    self.agent.post(&url)
                }
                .header("authorization", &auth);
                for (k, v) in headers {
                    r = r.header(*k, *v);
                }
                match body {
                    Some(b) => r.send(b),
                    None => r.send_empty(),
                }
            }
            other => {
                return Err(ClientError::Transport(format!(
                    "unsupported method {other}"
                )))
            }
        };
        let mut resp = resp.map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let headers: Vec<(String, String)> = resp
            .headers()
            .iter()
            .filter_map(|(k, v)| Some((k.as_str().to_string(), v.to_str().ok()?.to_string())))
            .collect();
        let body = resp
            .body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_vec()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        if let Some(t) = &self.transcript {
            let mut t = t.lock().expect("transcript lock");
            for (k, v) in &headers {
                t.extend_from_slice(format!("{k}: {v}\n").as_bytes());
            }
            t.extend_from_slice(&body);
            t.push(b'\n');
        }
        Ok(RawResponse {
            status,
            headers,
            body,
        })
    }

    fn expect(resp: RawResponse, ok: &[u16]) -> ClientResult<RawResponse> {
        if ok.contains(&resp.status) {
            return Ok(resp);
        }
        let message = serde_json::from_slice::<ErrorBody>(&resp.body)
            .map(|e| e.error)
            .unwrap_or_else(|_| String::from_utf8_lossy(&resp.body).into_owned());
        Err(ClientError::Http {
            status: resp.status,
            message,
        })
    }

    fn json<T: DeserializeOwned>(resp: &RawResponse) -> ClientResult<T> {
        serde_json::from_slice(&resp.body).map_err(|e| ClientError::Decode(e.to_string()))
    }

    pub fn put_object(
        &self,
        kind: ContentKind,
        envelope: &[u8],
        extra: &[(&str, &str)],
    ) -> ClientResult<ObjectMeta> {
        let mut headers = vec![(CONTENT_KIND_HEADER, kind.as_str())];
        headers.extend_from_slice(extra);
        let r = Self::expect(
            self.raw("PUT", "/objects", &headers, Some(envelope))?,
            &[201],
        )?;
        Self::json(&r)
    }

    pub fn list_objects(&self, kind: ContentKind) -> ClientResult<Vec<ObjectMeta>> {
        let r = self.raw("GET", &format!("/objects?kind={kind}"), &[], None)?;
        Self::json(&Self::expect(r, &[200])?)
    }

    pub fn get_object(&self, id: &str) -> ClientResult<RawResponse> {
        Self::expect(
            self.raw("GET", &format!("/objects/{id}"), &[], None)?,
            &[200],
        )
    }

    pub fn attestation(&self) -> ClientResult<AttestationStub> {
        let r = Self::expect(self.raw("GET", "/attestation", &[], None)?, &[200])?;
        Self::json(&r)
    }

    pub fn publish_attestation(&self, stub: &AttestationStub) -> ClientResult<()> {
        let body = serde_json::to_vec(stub).expect("stub serializes");
        Self::expect(
            self.raw(
                "PUT",
                "/attestation",
                &[("content-type", "application/json")],
                Some(&body),
            )?,
            &[204],
        )?;
        Ok(())
    }

    pub fn request_assessment(&self, req: &AssessmentRequest) -> ClientResult<AssessmentRecord> {
        let body = serde_json::to_vec(req).expect("request serializes");
        let r = self.raw(
            "POST",
            "/assessments",
            &[("content-type", "application/json")],
            Some(&body),
        )?;
        Self::json(&Self::expect(r, &[201])?)
    }

    pub fn claim(&self) -> ClientResult<Option<ClaimedAssessment>> {
        let r = Self::expect(
            self.raw("POST", "/assessments/claim", &[], None)?,
            &[200, 204],
        )?;
        if r.status == 204 {
            Ok(None)
        } else {
            Self::json(&r).map(Some)
        }
    }

    pub fn status(&self, id: &str) -> ClientResult<AssessmentRecord> {
        let r = self.raw("GET", &format!("/assessments/{id}"), &[], None)?;
        Self::json(&Self::expect(r, &[200])?)
    }

    pub fn mark_failed(&self, id: &str) -> ClientResult<()> {
        Self::expect(
            self.raw("POST", &format!("/assessments/{id}/fail"), &[], None)?,
            &[204],
        )?;
        Ok(())
    }

    /// Sealed report bytes, [`ClientError::NotReady`] while pending and
    /// [`ClientError::Failed`] when the enclave gave up.
    pub fn report(&self, id: &str) -> ClientResult<Vec<u8>> {
        let r = self.raw("GET", &format!("/assessments/{id}/report"), &[], None)?;
        match r.status {
            200 => Ok(r.body),
            202 => Err(ClientError::NotReady),
            409 => Err(ClientError::Failed),
            _ => Self::expect(r, &[]).map(|_| Vec::new()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submission {
    pub dataset_id: String,
    pub schema_id: String,
}

/// A decrypted report together with its exact canonical bytes.
#[derive(Debug, Clone)]
pub struct FetchedReport {
    pub bytes: Zeroizing<Vec<u8>>,
    pub report: QualityReport,
}

/// Data owner: seals dataset and schema to an attested enclave.
#[derive(Debug)]
pub struct Assessee {
    pub client: ProxyClient,
    pub keys: KeyPair,
    pub expected_code_hash: String,
}

impl Assessee {
    pub fn submit(
        &self,
        dataset: &[u8],
        format: DatasetFormat,
        schema: &[u8],
        domain: &str,
    ) -> ClientResult<Submission> {
        let enclave_key = self
            .client
            .attestation()?
            .verify(&self.expected_code_hash)?;
        let sender = self.keys.key_id();
        let data_env = seal(dataset, ContentKind::Dataset, &enclave_key, sender);
        let schema_env = seal(schema, ContentKind::Schema, &enclave_key, sender);
        let pk = self.keys.public_hex();
        let format = format.to_string();
        let d = self.client.put_object(
            ContentKind::Dataset,
            &data_env,
            &[
                (DOMAIN_HEADER, domain),
                (DATASET_FORMAT_HEADER, &format),
                (SENDER_KEY_HEADER, &pk),
            ],
        )?;
        let s =
            self.client
                .put_object(ContentKind::Schema, &schema_env, &[(DOMAIN_HEADER, domain)])?;
        Ok(Submission {
            dataset_id: d.object_id,
            schema_id: s.object_id,
        })
    }

    pub fn fetch_report(&self, assessment_id: &str) -> ClientResult<FetchedReport> {
        let sealed = self.client.report(assessment_id)?;
        let (header, bytes) = open(&sealed, &self.keys)?;
        if header.kind != ContentKind::Report {
            return Err(ClientError::Decode("object is not a report".into()));
        }
        let report = deserialize_report(&bytes).map_err(|e| ClientError::Decode(e.to_string()))?;
        Ok(FetchedReport { bytes, report })
    }

    /// Polls until the report is available or `timeout` elapses.
    pub fn wait_for_report(
        &self,
        assessment_id: &str,
        timeout: Duration,
    ) -> ClientResult<FetchedReport> {
        let deadline = std::time::Instant::now() + timeout;
        loop {
            match self.fetch_report(assessment_id) {
                Err(ClientError::NotReady) if std::time::Instant::now() < deadline => {
                    std::thread::sleep(Duration::from_millis(25))
                }
                other => return other,
            }
        }
    }
}

/// Assessment requester: supplies the configuration, never sees data.
#[derive(Debug)]
pub struct Assessor {
    pub client: ProxyClient,
    pub expected_code_hash: String,
}

impl Assessor {
    /// Uploads the configuration sealed to the enclave and enqueues an
    /// assessment of the given dataset and schema.
    pub fn request(
        &self,
        config: &[u8],
        dataset_id: &str,
        schema_id: &str,
    ) -> ClientResult<String> {
        let parsed =
            AssessmentConfig::from_json(config).map_err(|e| ClientError::Config(e.to_string()))?;
        let datasets = self.client.list_objects(ContentKind::Dataset)?;
        let dataset = datasets
            .iter()
            .find(|m| m.object_id == dataset_id)
            .ok_or_else(|| ClientError::Http {
                status: 404,
                message: format!("dataset {dataset_id} not listed"),
            })?;
        if dataset.domain != parsed.domain {
            return Err(ClientError::DomainMismatch {
                config: parsed.domain,
                dataset: dataset.domain.clone(),
            });
        }
        let enclave_key = self
            .client
            .attestation()?
            .verify(&self.expected_code_hash)?;
        let env = seal(
            config,
            ContentKind::Config,
            &enclave_key,
            crate::sealed::KeyId([0; 8]),
        );
        let domain_header: Vec<(&str, &str)> = parsed
            .domain
            .as_deref()
            .map(|d| vec![(DOMAIN_HEADER, d)])
            .unwrap_or_default();
        let c = self
            .client
            .put_object(ContentKind::Config, &env, &domain_header)?;
        let rec = self.client.request_assessment(&AssessmentRequest {
            dataset_id: dataset_id.to_string(),
            schema_id: schema_id.to_string(),
            config_id: c.object_id,
        })?;
        Ok(rec.assessment_id)
    }

    pub fn status(&self, assessment_id: &str) -> ClientResult<AssessmentStatus> {
        Ok(self.client.status(assessment_id)?.status)
    }
}
