//! Node identity and credential wallet, persisted as an encrypted vault
//! secret.

use ed25519_dalek::{SigningKey, VerifyingKey};
use rand::rngs::OsRng;
use serde::{Deserialize, Serialize};
use zeroize::Zeroizing;

use datavault_core::credential::{Attestation, DidSigner, SelfIdentity, TrustedIssuerList, VerifiableCredential};
use datavault_core::did::{did_for_key, DidDocument, PublicKeyEntry};
use datavault_core::keys::key_hex;
use datavault_core::Fingerprint;

use crate::vault::{Vault, VaultError};

const WALLET_SECRET: &str = "wallet";
pub const DID_KEY_ID: &str = "key-1";

/// Transport key pair plus DID and DID key pair.
pub struct Identity {
    transport: SigningKey,
    did_key: SigningKey,
    did: String,
    did_key_id: String,
}

impl std::fmt::Debug for Identity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Identity")
            .field("did", &self.did)
            .field("fingerprint", &self.fingerprint())
            .finish_non_exhaustive()
    }
}

impl Identity {
    pub fn generate() -> Self {
        let transport = SigningKey::generate(&mut OsRng);
        let did_key = SigningKey::generate(&mut OsRng);
        let did = did_for_key(&did_key.verifying_key());
        Self {
            transport,
            did_key,
            did,
            did_key_id: DID_KEY_ID.into(),
        }
    }

    pub fn transport_key(&self) -> &SigningKey {
        &self.transport
    }

    pub fn transport_public(&self) -> VerifyingKey {
        self.transport.verifying_key()
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::of(&self.transport.verifying_key())
    }

    pub fn did(&self) -> &str {
        &self.did
    }

    pub fn did_key_id(&self) -> &str {
        &self.did_key_id
    }

    pub fn did_public(&self) -> VerifyingKey {
        self.did_key.verifying_key()
    }

    pub fn did_signer(&self) -> DidSigner<'_> {
        DidSigner {
            did: &self.did,
            key_id: &self.did_key_id,
            key: &self.did_key,
        }
    }

    pub fn self_identity(&self) -> SelfIdentity {
        SelfIdentity {
            did: self.did.clone(),
            did_key_id: self.did_key_id.clone(),
            did_key: self.did_key.verifying_key(),
            transport_key: self.transport.verifying_key(),
        }
    }

    pub fn did_document(&self, updated_at: u64) -> DidDocument {
        DidDocument::new(
            self.did.clone(),
            vec![PublicKeyEntry {
                id: self.did_key_id.clone(),
                key: self.did_key.verifying_key(),
            }],
            updated_at,
        )
    }
}

/// Credentials this node holds, the issuers it trusts, and its identity.
#[derive(Debug)]
pub struct Wallet {
    pub identity: Identity,
    pub credentials: Vec<VerifiableCredential>,
    pub attestations: Vec<Attestation>,
    pub trusted: TrustedIssuerList,
    pub did_registered: bool,
    pub issued_count: u64,
}

#[derive(Serialize, Deserialize)]
struct WalletFile {
    transport_seed: String,
    did_seed: String,
    did: String,
    did_key_id: String,
    #[serde(default)]
    credentials: Vec<VerifiableCredential>,
    #[serde(default)]
    attestations: Vec<Attestation>,
    trusted: TrustedIssuerList,
    did_registered: bool,
    #[serde(default)]
    issued_count: u64,
}

impl Drop for WalletFile {
    fn drop(&mut self) {
        use zeroize::Zeroize;
        self.transport_seed.zeroize();
        self.did_seed.zeroize();
    }
}

/// Public part of the wallet, safe to return from the admin API.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WalletSummary {
    pub did: String,
    pub transport_key: String,
    pub fingerprint: String,
    pub did_registered: bool,
    pub credentials: Vec<VerifiableCredential>,
    pub attestations: Vec<Attestation>,
    pub trusted: TrustedIssuerList,
}

fn seed(hex_str: &str) -> Result<SigningKey, VaultError> {
    let mut bytes = Zeroizing::new([0u8; 32]);
    hex::decode_to_slice(hex_str, bytes.as_mut()).map_err(|_| VaultError::Integrity("wallet key".into()))?;
    Ok(SigningKey::from_bytes(&bytes))
}

impl Wallet {
    pub fn new(identity: Identity) -> Self {
        Self {
            identity,
            credentials: Vec::new(),
            attestations: Vec::new(),
            trusted: TrustedIssuerList::default(),
            did_registered: false,
            issued_count: 0,
        }
    }

    pub fn load(vault: &Vault) -> Result<Option<Wallet>, VaultError> {
        let Some(bytes) = vault.read_secret(WALLET_SECRET)?.map(Zeroizing::new) else {
            return Ok(None);
        };
        let file: WalletFile =
            serde_json::from_slice(&bytes).map_err(|_| VaultError::Integrity("wallet".into()))?;
        let identity = Identity {
            transport: seed(&file.transport_seed)?,
            did_key: seed(&file.did_seed)?,
            did: file.did.clone(),
            did_key_id: file.did_key_id.clone(),
        };
        Ok(Some(Wallet {
            identity,
            credentials: file.credentials.clone(),
            attestations: file.attestations.clone(),
            trusted: file.trusted.clone(),
            did_registered: file.did_registered,
            issued_count: file.issued_count,
        }))
    }

    pub fn save(&self, vault: &Vault) -> Result<(), VaultError> {
        let file = WalletFile {
            transport_seed: hex::encode(self.identity.transport.to_bytes()),
            did_seed: hex::encode(self.identity.did_key.to_bytes()),
            did: self.identity.did.clone(),
            did_key_id: self.identity.did_key_id.clone(),
            credentials: self.credentials.clone(),
            attestations: self.attestations.clone(),
            trusted: self.trusted.clone(),
            did_registered: self.did_registered,
            issued_count: self.issued_count,
        };
        let bytes = Zeroizing::new(serde_json::to_vec(&file).expect("serializable"));
        vault.write_secret(WALLET_SECRET, &bytes)
    }

    /// Adds a credential unless one with the same id is already held.
    pub fn add_credential(&mut self, vc: VerifiableCredential) -> bool {
        if self.credentials.iter().any(|c| c.id == vc.id && c.issuer == vc.issuer) {
            return false;
        }
        self.credentials.push(vc);
        true
    }

    pub fn add_attestation(&mut self, att: Attestation) -> bool {
        if self.attestations.iter().any(|a| a.id() == att.id()) {
            return false;
        }
        self.attestations.push(att);
        true
    }

    /// Attestations bound to this node's transport key.
    pub fn own_attestations(&self) -> Vec<Attestation> {
        let fp = self.identity.fingerprint();
        self.attestations.iter().filter(|a| a.holder_fingerprint == fp).cloned().collect()
    }

    pub fn summary(&self) -> WalletSummary {
        WalletSummary {
            did: self.identity.did.clone(),
            transport_key: key_hex(&self.identity.transport_public()),
            fingerprint: self.identity.fingerprint().to_hex(),
            did_registered: self.did_registered,
            credentials: self.credentials.clone(),
            attestations: self.attestations.clone(),
            trusted: self.trusted.clone(),
        }
    }
}
