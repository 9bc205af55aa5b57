//! Simulated enclave: claims queued assessments one at a time, decrypts the
//! inputs in memory, runs the assessment and seals the report back to the
//! data owner.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use thiserror::Error;
use zeroize::Zeroizing;

use dq_core::{assess, parse_schema, serialize_report, AssessmentConfig, DatasetFormat};

use crate::api::{ClaimedAssessment, ASSESSMENT_HEADER};
use crate::attestation::Attestor;
use crate::client::{ClientError, ProxyClient};
use crate::sealed::{open, public_key_from_hex, seal, ContentKind, KeyPair};

#[derive(Debug, Error)]
pub enum EnclaveError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("attestation failed: {0}")]
    Attestation(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Completed {
        assessment_id: String,
        report_id: String,
    },
    Failed {
        assessment_id: String,
    },
}

/// Reasons an assessment is abandoned. Only logged as a category so that no
/// detail about the plaintext leaves the enclave.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Abort {
    Fetch,
    Decrypt,
    WrongKind,
    Schema,
    Config,
    Assessment,
    Upload,
}

pub struct Enclave {
    client: ProxyClient,
    keys: KeyPair,
}

impl Enclave {
    pub fn new(client: ProxyClient, keys: KeyPair) -> Self {
        Self { client, keys }
    }

    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }

    pub fn publish_attestation(&self, attestor: &dyn Attestor) -> Result<(), EnclaveError> {
        let stub = attestor.attest(&self.keys)?;
        self.client.publish_attestation(&stub)?;
        log::info!("published attestation with code hash {}", stub.code_hash);
        Ok(())
    }

    fn fetch_open(&self, id: &str, kind: ContentKind) -> Result<Zeroizing<Vec<u8>>, Abort> {
        let resp = self.client.get_object(id).map_err(|_| Abort::Fetch)?;
        let (header, plain) = open(&resp.body, &self.keys).map_err(|_| Abort::Decrypt)?;
        if header.kind != kind {
            return Err(Abort::WrongKind);
        }
        Ok(plain)
    }

    fn run_claimed(&self, job: &ClaimedAssessment) -> Result<String, Abort> {
        let dataset = self.fetch_open(&job.dataset_id, ContentKind::Dataset)?;
        let schema_bytes = self.fetch_open(&job.schema_id, ContentKind::Schema)?;
        let config_bytes = self.fetch_open(&job.config_id, ContentKind::Config)?;

        let schema = parse_schema(&schema_bytes).map_err(|_| Abort::Schema)?;
        let config = AssessmentConfig::from_json(&config_bytes).map_err(|_| Abort::Config)?;
        let format: DatasetFormat = job.dataset_format.parse().map_err(|_| Abort::Config)?;
        let assessment =
            assess(dataset.as_slice(), format, &schema, &config).map_err(|_| Abort::Assessment)?;
        drop(dataset);
        let report = Zeroizing::new(serialize_report(&assessment.report));
        drop(assessment);

        let recipient =
            public_key_from_hex(&job.report_recipient_key).map_err(|_| Abort::Upload)?;
        let sealed = seal(&report, ContentKind::Report, &recipient, self.keys.key_id());
        let meta = self
            .client
            .put_object(
                ContentKind::Report,
                &sealed,
                &[(ASSESSMENT_HEADER, &job.assessment_id)],
            )
            .map_err(|_| Abort::Upload)?;
        Ok(meta.object_id)
    }

    /// Processes at most one queued assessment.
    pub fn process_next(&self) -> Result<Option<Outcome>, EnclaveError> {
        let Some(job) = self.client.claim()? else {
            return Ok(None);
        };
        log::info!("processing assessment {}", job.assessment_id);
        match self.run_claimed(&job) {
            Ok(report_id) => Ok(Some(Outcome::Completed {
                assessment_id: job.assessment_id,
                report_id,
            })),
            Err(reason) => {
                log::warn!("assessment {} aborted ({reason:?})", job.assessment_id);
                self.client.mark_failed(&job.assessment_id)?;
                Ok(Some(Outcome::Failed {
                    assessment_id: job.assessment_id,
                }))
            }
        }
    }

    /// Serves the queue until `stop` is set, polling every `poll` when idle.
    pub fn run(&self, poll: Duration, stop: &AtomicBool) -> Result<(), EnclaveError> {
        while !stop.load(Ordering::Relaxed) {
            match self.process_next() {
                Ok(Some(_)) => {}
                Ok(None) => std::thread::sleep(poll),
                Err(EnclaveError::Client(ClientError::Transport(e))) => {
                    log::warn!("proxy unreachable: {e}");
                    std::thread::sleep(poll);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }
}
