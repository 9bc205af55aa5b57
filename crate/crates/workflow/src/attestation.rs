//! Simulated enclave attestation: a published code hash plus the enclave's
//! public key. A hardware backend would implement [`Attestor`] with a real
//! quote; clients only ever see the [`AttestationStub`].

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use x25519_dalek::PublicKey;

use crate::sealed::{public_key_from_hex, KeyPair, SealError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttestationStub {
    /// Hex SHA-256 of the enclave's assessment binary.
    pub code_hash: String,
    /// Hex X25519 public key that data must be sealed to.
    pub enclave_public_key: String,
}

#[derive(Debug, Error)]
pub enum AttestationError {
    #[error("enclave code hash {actual} does not match the expected {expected}")]
    HashMismatch { expected: String, actual: String },
    #[error(transparent)]
    Key(#[from] SealError),
}

impl AttestationStub {
    /// Checks the code hash and returns the key to seal to.
    pub fn verify(&self, expected_code_hash: &str) -> Result<PublicKey, AttestationError> {
        if !self
            .code_hash
            .eq_ignore_ascii_case(expected_code_hash.trim())
        {
            return Err(AttestationError::HashMismatch {
                expected: expected_code_hash.trim().to_string(),
                actual: self.code_hash.clone(),
            });
        }
        Ok(public_key_from_hex(&self.enclave_public_key)?)
    }
}

pub trait Attestor {
    fn attest(&self, keys: &KeyPair) -> io::Result<AttestationStub>;
}

/// Attests by hashing a binary on disk.
#[derive(Debug, Clone)]
pub struct CodeHashAttestor {
    pub binary: std::path::PathBuf,
}

impl CodeHashAttestor {
    /// Hashes the running executable.
    pub fn current_exe() -> io::Result<Self> {
        Ok(Self {
            binary: std::env::current_exe()?,
        })
    }
}

impl Attestor for CodeHashAttestor {
    fn attest(&self, keys: &KeyPair) -> io::Result<AttestationStub> {
        Ok(AttestationStub {
            code_hash: file_code_hash(&self.binary)?,
            enclave_public_key: keys.public_hex(),
        })
    }
}

pub fn file_code_hash(path: &Path) -> io::Result<String> {
    let mut f = std::fs::File::open(path)?;
    let mut h = Sha256::new();
    io::copy(&mut f, &mut h)?;
    Ok(hex::encode(h.finalize()))
}
