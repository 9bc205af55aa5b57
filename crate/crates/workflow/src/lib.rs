//! Data-blind assessment across three parties.
//!
//! The data owner (assessee) seals its dataset and schema to an attested
//! enclave and deposits them with a proxy resource server. The assessor
//! supplies a sealed configuration and queues a request. The enclave
//! decrypts in memory, assesses, and seals the report back to the assessee.
//! The proxy and the assessor only ever handle ciphertext and metadata.

pub mod access;
pub mod api;
pub mod attestation;
pub mod client;
pub mod enclave;
pub mod proxy;
pub mod sealed;
pub mod store;

pub use access::{AccessToken, Permission, Resource, Role};
pub use attestation::{AttestationStub, Attestor, CodeHashAttestor};
pub use client::{Assessee, Assessor, ClientError, ProxyClient, Submission};
pub use enclave::{Enclave, Outcome};
pub use proxy::{spawn as spawn_proxy, ProxyConfig, ProxyHandle};
pub use sealed::{open, seal, ContentKind, KeyId, KeyPair, SealError};
