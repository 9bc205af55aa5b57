//! Anonymous public-key encryption of whole objects.
//!
//! Each object is encrypted under a fresh X25519 ephemeral key agreed with
//! the recipient's static key; HKDF-SHA256 turns the shared secret into an
//! XChaCha20-Poly1305 key. The envelope header is bound as associated data,
//! so any change to kind, key ids, ephemeral key or nonce breaks decryption.
//!
//! ```text
//! offset  len  field
//!      0    4  magic "DQSB"
//!      4    1  content kind (1 dataset, 2 schema, 3 config, 4 report)
//!      5    8  recipient key id
//!     13    8  sender key id
//!     21   32  ephemeral X25519 public key
//!     53   24  nonce
//!     77    *  ciphertext followed by the 16-byte Poly1305 tag
//! ```
//!
//! A key id is the first 8 bytes of SHA-256 over the 32-byte public key.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chacha20poly1305::aead::{Aead, Payload};
use chacha20poly1305::{KeyInit, XChaCha20Poly1305, XNonce};
use hkdf::Hkdf;
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use x25519_dalek::{PublicKey, StaticSecret};
use zeroize::Zeroizing;

pub const MAGIC: &[u8; 4] = b"DQSB";
pub const HEADER_LEN: usize = 4 + 1 + 8 + 8 + 32 + 24;
pub const TAG_LEN: usize = 16;
const KDF_INFO: &[u8] = b"dq sealed object v1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SealError {
    #[error("envelope too short")]
    Truncated,
    #[error("not a sealed object")]
    BadMagic,
    #[error("unknown content kind {0}")]
    BadKind(u8),
    #[error("object is sealed to another key")]
    WrongRecipient,
    #[error("decryption failed")]
    Decrypt,
    #[error("invalid key material: {0}")]
    BadKey(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentKind {
    Dataset,
    Schema,
    Config,
    Report,
}

impl ContentKind {
    pub const ALL: [ContentKind; 4] = [
        ContentKind::Dataset,
        ContentKind::Schema,
        ContentKind::Config,
        ContentKind::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ContentKind::Dataset => "dataset",
            ContentKind::Schema => "schema",
            ContentKind::Config => "config",
            ContentKind::Report => "report",
        }
    }

    fn tag(self) -> u8 {
        match self {
            ContentKind::Dataset => 1,
            ContentKind::Schema => 2,
            ContentKind::Config => 3,
            ContentKind::Report => 4,
        }
    }

    fn from_tag(t: u8) -> Result<Self, SealError> {
        Ok(match t {
            1 => ContentKind::Dataset,
            2 => ContentKind::Schema,
            3 => ContentKind::Config,
            4 => ContentKind::Report,
            other => return Err(SealError::BadKind(other)),
        })
    }
}

impl fmt::Display for ContentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ContentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown content kind `{s}`"))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyId(pub [u8; 8]);

impl KeyId {
    pub fn of(public: &PublicKey) -> Self {
        let digest = Sha256::digest(public.as_bytes());
        let mut id = [0u8; 8];
        id.copy_from_slice(&digest[..8]);
        KeyId(id)
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyId({self})")
    }
}

impl Serialize for KeyId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for KeyId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let id: [u8; 8] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("key id must be 8 bytes"))?;
        Ok(KeyId(id))
    }
}

/// Static X25519 key pair. The secret is wiped on drop.
#[derive(Clone)]
pub struct KeyPair {
    secret: StaticSecret,
    public: PublicKey,
}

impl KeyPair {
    pub fn generate() -> Self {
        Self::from_secret(StaticSecret::random_from_rng(OsRng))
    }

    pub fn from_secret(secret: StaticSecret) -> Self {
        let public = PublicKey::from(&secret);
        Self { secret, public }
    }

    pub fn from_secret_hex(s: &str) -> Result<Self, SealError> {
        let bytes =
            Zeroizing::new(hex::decode(s.trim()).map_err(|e| SealError::BadKey(e.to_string()))?);
        let arr: [u8; 32] = bytes
            .as_slice()
            .try_into()
            .map_err(|_| SealError::BadKey("secret key must be 32 bytes".into()))?;
        Ok(Self::from_secret(StaticSecret::from(arr)))
    }

    pub fn secret_hex(&self) -> Zeroizing<String> {
        Zeroizing::new(hex::encode(self.secret.as_bytes()))
    }

    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn public_hex(&self) -> String {
        hex::encode(self.public.as_bytes())
    }

    pub fn key_id(&self) -> KeyId {
        KeyId::of(&self.public)
    }

    /// Reads a secret key file (hex) written by [`KeyPair::save`].
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = Zeroizing::new(std::fs::read_to_string(path)?);
        Self::from_secret_hex(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Writes `<stem>.key` (secret, hex) and `<stem>.pub` (public, hex).
    pub fn save(&self, stem: &Path) -> std::io::Result<()> {
        std::fs::write(stem.with_extension("key"), self.secret_hex().as_bytes())?;
        std::fs::write(stem.with_extension("pub"), self.public_hex())
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("key_id", &self.key_id())
            .finish_non_exhaustive()
    }
}

pub fn public_key_from_hex(s: &str) -> Result<PublicKey, SealError> {
    let bytes = hex::decode(s.trim()).map_err(|e| SealError::BadKey(e.to_string()))?;
    let arr: [u8; 32] = bytes
        .try_into()
        .map_err(|_| SealError::BadKey("public key must be 32 bytes".into()))?;
    Ok(PublicKey::from(arr))
}

/// The cleartext header of an envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvelopeHeader {
    pub kind: ContentKind,
    pub recipient: KeyId,
    pub sender: KeyId,
    pub ephemeral: [u8; 32],
    pub nonce: [u8; 24],
}

impl EnvelopeHeader {
    pub fn parse(envelope: &[u8]) -> Result<Self, SealError> {
        if envelope.len() < HEADER_LEN + TAG_LEN {
            return Err(SealError::Truncated);
        }
        if &envelope[..4] != MAGIC {
            return Err(SealError::BadMagic);
        }
        let take = |from: usize, len: usize| &envelope[from..from + len];
        Ok(Self {
            kind: ContentKind::from_tag(envelope[4])?,
            recipient: KeyId(take(5, 8).try_into().expect("8 bytes")),
            sender: KeyId(take(13, 8).try_into().expect("8 bytes")),
            ephemeral: take(21, 32).try_into().expect("32 bytes"),
            nonce: take(53, 24).try_into().expect("24 bytes"),
        })
    }

    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[..4].copy_from_slice(MAGIC);
        h[4] = self.kind.tag();
        h[5..13].copy_from_slice(&self.recipient.0);
        h[13..21].copy_from_slice(&self.sender.0);
        h[21..53].copy_from_slice(&self.ephemeral);
        h[53..77].copy_from_slice(&self.nonce);
        h
    }
}

fn derive_cipher(
    shared: &[u8; 32],
    ephemeral: &[u8; 32],
    recipient: &PublicKey,
) -> XChaCha20Poly1305 {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(ephemeral);
    salt[32..].copy_from_slice(recipient.as_bytes());
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut key = Zeroizing::new([0u8; 32]);
    hk.expand(KDF_INFO, key.as_mut())
        .expect("32 bytes is a valid HKDF output length");
    XChaCha20Poly1305::new(key.as_ref().into())
}

/// Encrypts `plaintext` so that only the holder of `recipient`'s secret can
/// read it. `sender` is recorded in the header for routing only.
pub fn seal(plaintext: &[u8], kind: ContentKind, recipient: &PublicKey, sender: KeyId) -> Vec<u8> {
    let ephemeral = StaticSecret::random_from_rng(OsRng);
    let ephemeral_pk = PublicKey::from(&ephemeral);
    let shared = ephemeral.diffie_hellman(recipient);
    let mut nonce = [0u8; 24];
    OsRng.fill_bytes(&mut nonce);

    let header = EnvelopeHeader {
        kind,
        recipient: KeyId::of(recipient),
        sender,
        ephemeral: ephemeral_pk.to_bytes(),
        nonce,
    }
    .encode();
    let cipher = derive_cipher(shared.as_bytes(), &ephemeral_pk.to_bytes(), recipient);
    let ct = cipher
        .encrypt(
            XNonce::from_slice(&nonce),
            Payload {
                msg: plaintext,
                aad: &header,
            },
        )
        .expect("encryption of in-memory buffers cannot fail");
    let mut out = Vec::with_capacity(HEADER_LEN + ct.len());
    out.extend_from_slice(&header);
    out.extend_from_slice(&ct);
    out
}

/// Decrypts an envelope addressed to `recipient`.
pub fn open(
    envelope: &[u8],
    recipient: &KeyPair,
) -> Result<(EnvelopeHeader, Zeroizing<Vec<u8>>), SealError> {
    let header = EnvelopeHeader::parse(envelope)?;
    if header.recipient != recipient.key_id() {
        return Err(SealError::WrongRecipient);
    }
    let shared = recipient
        .secret
        .diffie_hellman(&PublicKey::from(header.ephemeral));
    let cipher = derive_cipher(shared.as_bytes(), &header.ephemeral, recipient.public());
    let pt = cipher
        .decrypt(
            XNonce::from_slice(&header.nonce),
            Payload {
                msg: &envelope[HEADER_LEN..],
                aad: &envelope[..HEADER_LEN],
            },
        )
        .map_err(|_| SealError::Decrypt)?;
    Ok((header, Zeroizing::new(pt)))
}
