//! Key material helpers, fingerprints and verification accounting.

use core::fmt;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// SHA-256 digest of a transport public key. Binds credentials and session
/// tokens to the peer that is allowed to present them.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Fingerprint(#[serde(with = "crate::encoding::hex32")] pub [u8; 32]);

impl Fingerprint {
    pub fn of(key: &VerifyingKey) -> Self {
        Self(Sha256::digest(key.as_bytes()).into())
    }

    pub fn to_hex(&self) -> alloc::string::String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).ok()?;
        Some(Self(out))
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("invalid public key encoding")]
pub struct BadKey;

pub fn parse_public_key(hex_str: &str) -> Result<VerifyingKey, BadKey> {
    let mut bytes = [0u8; 32];
    hex::decode_to_slice(hex_str, &mut bytes).map_err(|_| BadKey)?;
    VerifyingKey::from_bytes(&bytes).map_err(|_| BadKey)
}

pub fn key_hex(key: &VerifyingKey) -> alloc::string::String {
    hex::encode(key.as_bytes())
}

/// Counts the expensive steps of a verification: signature checks and
/// key-registry lookups. Every verifier in this crate takes one of these.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyCounts {
    pub signatures: u64,
    pub registry_lookups: u64,
}

impl VerifyCounts {
    pub fn add(&mut self, other: VerifyCounts) {
        self.signatures += other.signatures;
        self.registry_lookups += other.registry_lookups;
    }
}

/// Signs `domain || message`.
pub fn sign(key: &SigningKey, domain: &[u8], message: &[u8]) -> Signature {
    key.sign(&domain_message(domain, message))
}

/// Verifies `domain || message`, counting one signature check.
pub fn verify(
    key: &VerifyingKey,
    domain: &[u8],
    message: &[u8],
    sig: &Signature,
    counts: &mut VerifyCounts,
) -> bool {
    counts.signatures += 1;
    key.verify(&domain_message(domain, message), sig).is_ok()
}

fn domain_message(domain: &[u8], message: &[u8]) -> alloc::vec::Vec<u8> {
    let mut buf = alloc::vec::Vec::with_capacity(domain.len() + message.len());
    buf.extend_from_slice(domain);
    buf.extend_from_slice(message);
    buf
}
