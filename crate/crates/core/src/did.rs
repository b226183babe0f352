//! DID documents and the resolver interface credential verification uses.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use ed25519_dalek::VerifyingKey;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// DID method prefix used by identities in this system.
pub const DID_PREFIX: &str = "did:dv:";

/// Derives a DID from the initial key of its controller.
pub fn did_for_key(key: &VerifyingKey) -> String {
    let digest = Sha256::digest(key.as_bytes());
    let mut s = String::from(DID_PREFIX);
    s.push_str(&hex::encode(&digest[..16]));
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicKeyEntry {
    /// Key id, unique within the document (e.g. `key-1`).
    pub id: String,
    #[serde(with = "crate::encoding::hex_key")]
    pub key: VerifyingKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DidDocument {
    pub did: String,
    pub public_keys: Vec<PublicKeyEntry>,
    pub updated_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DocumentError {
    #[error("DID must start with {DID_PREFIX}")]
    BadDid,
    #[error("document has no public keys")]
    NoKeys,
    #[error("duplicate key id {0:?}")]
    DuplicateKeyId(String),
}

impl DidDocument {
    pub fn new(did: String, keys: Vec<PublicKeyEntry>, updated_at: u64) -> Self {
        Self {
            did,
            public_keys: keys,
            updated_at,
        }
    }

    pub fn validate(&self) -> Result<(), DocumentError> {
        if !self.did.starts_with(DID_PREFIX) || self.did.len() == DID_PREFIX.len() {
            return Err(DocumentError::BadDid);
        }
        if self.public_keys.is_empty() {
            return Err(DocumentError::NoKeys);
        }
        let mut seen = BTreeSet::new();
        for k in &self.public_keys {
            if !seen.insert(k.id.as_str()) {
                return Err(DocumentError::DuplicateKeyId(k.id.clone()));
            }
        }
        Ok(())
    }

    pub fn key(&self, id: &str) -> Option<&VerifyingKey> {
        self.public_keys.iter().find(|k| k.id == id).map(|k| &k.key)
    }
}

/// Splits `did:dv:abc#key-1` into the DID and the key id.
pub fn split_verification_method(vm: &str) -> Option<(&str, &str)> {
    let (did, kid) = vm.split_once('#')?;
    (!did.is_empty() && !kid.is_empty()).then_some((did, kid))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResolveError {
    #[error("DID not found")]
    NotFound,
    #[error("registry unavailable: {0}")]
    Unavailable(String),
}

/// Source of DID documents and issuer accreditation.
pub trait DidResolver {
    fn resolve(&self, did: &str) -> Result<DidDocument, ResolveError>;
    fn is_accredited(&self, did: &str) -> Result<bool, ResolveError>;
}

impl<T: DidResolver + ?Sized> DidResolver for &T {
    fn resolve(&self, did: &str) -> Result<DidDocument, ResolveError> {
        (**self).resolve(did)
    }
    fn is_accredited(&self, did: &str) -> Result<bool, ResolveError> {
        (**self).is_accredited(did)
    }
}

impl<T: DidResolver + ?Sized> DidResolver for alloc::sync::Arc<T> {
    fn resolve(&self, did: &str) -> Result<DidDocument, ResolveError> {
        (**self).resolve(did)
    }
    fn is_accredited(&self, did: &str) -> Result<bool, ResolveError> {
        (**self).is_accredited(did)
    }
}
