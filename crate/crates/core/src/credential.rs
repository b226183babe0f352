//! Access-token credentials: single-claim attestations, W3C-style verifiable
//! credentials and presentations, and self-issued credentials.
//!
//! Every [`AttributeBag`] handed to the policy engine is produced here, by
//! [`verify_attestation`], [`verify_presentation`] or [`verify_credential`].
//! All signatures are Ed25519 over a domain tag followed by canonical JSON.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use ed25519_dalek::{Signature, SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::did::{split_verification_method, DidDocument, DidResolver, ResolveError};
use crate::encoding::{b64url, b64url_decode, canonical_json};
use crate::keys::{self, key_hex, Fingerprint, VerifyCounts};
use crate::policy::{AttributeBag, EvalContext};
use crate::value::{Date, Value};

const ATTESTATION_DOMAIN: &[u8] = b"datavault/attestation/v1\n";
const CREDENTIAL_DOMAIN: &[u8] = b"datavault/credential/v1\n";
const PRESENTATION_DOMAIN: &[u8] = b"datavault/presentation/v1\n";

pub const PROOF_TYPE: &str = "Ed25519Signature2020";
pub const VC_CONTEXT: &str = "https://www.w3.org/2018/credentials/v1";

/// Reserved trust-list entry standing for the local node's own identity.
pub const SELF_ISSUER: &str = "self";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CredentialError {
    #[error("signature does not verify")]
    BadSignature,
    #[error("credential is bound to a different holder")]
    HolderMismatch,
    #[error("issuer is not trusted")]
    UntrustedIssuer,
    #[error("issuer DID cannot be resolved")]
    UnresolvableIssuer,
    #[error("registry unavailable: {0}")]
    RegistryUnavailable(String),
    #[error("holder proof invalid: {0}")]
    HolderProofInvalid(String),
    #[error("no credential survived verification")]
    EmptyAfterFiltering,
    #[error("credential must carry at least one claim")]
    EmptyClaims,
    #[error("malformed credential: {0}")]
    Malformed(String),
}

/// The verifying node's own identity: its DID, DID key and transport key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelfIdentity {
    pub did: String,
    pub did_key_id: String,
    pub did_key: VerifyingKey,
    pub transport_key: VerifyingKey,
}

impl SelfIdentity {
    /// Identities an `issuer = me` rule matches on this node.
    pub fn eval_context(&self) -> EvalContext {
        EvalContext::new([
            self.did.clone(),
            key_hex(&self.did_key),
            key_hex(&self.transport_key),
        ])
    }

    pub fn owns_key(&self, key: &VerifyingKey) -> bool {
        *key == self.did_key || *key == self.transport_key
    }
}

/// Issuers a node trusts locally: attestor public keys (hex) and issuer
/// DIDs, plus the reserved [`SELF_ISSUER`] entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrustedIssuerList {
    entries: BTreeSet<String>,
}

impl Default for TrustedIssuerList {
    fn default() -> Self {
        Self {
            entries: BTreeSet::from([SELF_ISSUER.to_string()]),
        }
    }
}

impl TrustedIssuerList {
    pub fn empty() -> Self {
        Self {
            entries: BTreeSet::new(),
        }
    }

    pub fn grant_trust(&mut self, issuer: &str) -> bool {
        self.entries.insert(issuer.to_string())
    }

    /// Removing an unknown id is a no-op.
    pub fn revoke_trust(&mut self, issuer: &str) -> bool {
        self.entries.remove(issuer)
    }

    pub fn contains(&self, issuer: &str) -> bool {
        self.entries.contains(issuer)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(String::as_str)
    }

    pub fn trusts_attestor(&self, key: &VerifyingKey, me: &SelfIdentity) -> bool {
        self.contains(&key_hex(key)) || (me.owns_key(key) && self.contains(SELF_ISSUER))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub name: String,
    pub value: Value,
}

/// Single-claim credential carrying its attestor key inline, bound to the
/// fingerprint of the holder's transport key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attestation {
    pub claim: Claim,
    #[serde(with = "crate::encoding::hex_key")]
    pub attestor: VerifyingKey,
    pub holder_fingerprint: Fingerprint,
    #[serde(with = "crate::encoding::b64_sig")]
    pub signature: Signature,
}

impl Attestation {
    fn payload(claim: &Claim, holder: &Fingerprint) -> Vec<u8> {
        canonical_json(&json!({ "claim": claim, "holder_fingerprint": holder }))
    }

    pub fn issue(attestor: &SigningKey, claim: Claim, holder: Fingerprint) -> Self {
        let signature = keys::sign(attestor, ATTESTATION_DOMAIN, &Self::payload(&claim, &holder));
        Self {
            claim,
            attestor: attestor.verifying_key(),
            holder_fingerprint: holder,
            signature,
        }
    }

    pub fn id(&self) -> String {
        let d = Sha256::digest(self.signature.to_bytes());
        format!("att:{}", hex::encode(&d[..8]))
    }
}

/// Checks signature, holder binding and attestor trust, in that order.
/// The attestor key travels with the attestation, so no lookup happens.
pub fn verify_attestation(
    att: &Attestation,
    expected: &Fingerprint,
    trusted: &TrustedIssuerList,
    me: &SelfIdentity,
    counts: &mut VerifyCounts,
) -> Result<AttributeBag, CredentialError> {
    let payload = Attestation::payload(&att.claim, &att.holder_fingerprint);
    if !keys::verify(&att.attestor, ATTESTATION_DOMAIN, &payload, &att.signature, counts) {
        return Err(CredentialError::BadSignature);
    }
    if att.holder_fingerprint != *expected {
        return Err(CredentialError::HolderMismatch);
    }
    if !trusted.trusts_attestor(&att.attestor, me) {
        return Err(CredentialError::UntrustedIssuer);
    }
    Ok(AttributeBag {
        credential_id: att.id(),
        claims: BTreeMap::from([(att.claim.name.clone(), att.claim.value.clone())]),
        issuer: key_hex(&att.attestor),
        issuance_date: None,
        trusted: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proof {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(rename = "verificationMethod")]
    pub verification_method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub challenge: Option<String>,
    #[serde(rename = "proofValue")]
    pub proof_value: String,
}

impl Proof {
    fn signature(&self) -> Option<Signature> {
        let bytes = b64url_decode(&self.proof_value)?;
        Signature::from_slice(&bytes).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CredentialSubject {
    pub id: String,
    #[serde(flatten)]
    pub claims: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifiableCredential {
    #[serde(rename = "@context")]
    pub context: Vec<String>,
    pub id: String,
    #[serde(rename = "type")]
    pub types: Vec<String>,
    pub issuer: String,
    #[serde(rename = "issuanceDate")]
    pub issuance_date: String,
    #[serde(rename = "credentialSubject")]
    pub subject: CredentialSubject,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proof: Option<Proof>,
}

/// Signing identity: a DID, the id of one of its keys, and that key.
pub struct DidSigner<'a> {
    pub did: &'a str,
    pub key_id: &'a str,
    pub key: &'a SigningKey,
}

impl DidSigner<'_> {
    fn verification_method(&self) -> String {
        format!("{}#{}", self.did, self.key_id)
    }
}

impl VerifiableCredential {
    fn payload(&self, verification_method: &str) -> Vec<u8> {
        let mut unsigned = self.clone();
        unsigned.proof = None;
        canonical_json(&json!({ "credential": unsigned, "verificationMethod": verification_method }))
    }

    /// Creates and signs a credential. `issuance_date` is ISO-8601.
    pub fn issue(
        issuer: &DidSigner<'_>,
        id: &str,
        subject_did: &str,
        claims: BTreeMap<String, Value>,
        issuance_date: &str,
    ) -> Result<Self, CredentialError> {
        if claims.is_empty() {
            return Err(CredentialError::EmptyClaims);
        }
        if Date::from_iso_prefix(issuance_date).is_none() {
            return Err(CredentialError::Malformed(format!("bad issuance date {issuance_date:?}")));
        }
        let mut vc = Self {
            context: vec![VC_CONTEXT.into()],
            id: id.into(),
            types: vec!["VerifiableCredential".into()],
            issuer: issuer.did.into(),
            issuance_date: issuance_date.into(),
            subject: CredentialSubject {
                id: subject_did.into(),
                claims,
            },
            proof: None,
        };
        let vm = issuer.verification_method();
        let sig = keys::sign(issuer.key, CREDENTIAL_DOMAIN, &vc.payload(&vm));
        vc.proof = Some(Proof {
            kind: PROOF_TYPE.into(),
            verification_method: vm,
            challenge: None,
            proof_value: b64url(&sig.to_bytes()),
        });
        Ok(vc)
    }

    fn bag(&self) -> Result<AttributeBag, CredentialError> {
        let date = Date::from_iso_prefix(&self.issuance_date)
            .ok_or_else(|| CredentialError::Malformed("bad issuanceDate".into()))?;
        Ok(AttributeBag {
            credential_id: self.id.clone(),
            claims: self.subject.claims.clone(),
            issuer: self.issuer.clone(),
            issuance_date: Some(date),
            trusted: true,
        })
    }
}

/// Issues a self-issued credential: signed by the local DID key, meant to be
/// presented back to this node, which verifies it without any lookup.
pub fn issue_sic(
    me: &DidSigner<'_>,
    id: &str,
    subject_did: &str,
    claims: BTreeMap<String, Value>,
    issuance_date: &str,
) -> Result<VerifiableCredential, CredentialError> {
    VerifiableCredential::issue(me, id, subject_did, claims, issuance_date)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifiablePresentation {
    #[serde(rename = "@context")]
    pub context: Vec<String>,
    #[serde(rename = "type")]
    pub types: Vec<String>,
    pub holder: String,
    #[serde(rename = "verifiableCredential")]
    pub credentials: Vec<VerifiableCredential>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proof: Option<Proof>,
}

impl VerifiablePresentation {
    fn payload(&self, verification_method: &str, challenge: &str) -> Vec<u8> {
        let mut unsigned = self.clone();
        unsigned.proof = None;
        canonical_json(&json!({
            "presentation": unsigned,
            "verificationMethod": verification_method,
            "challenge": challenge,
        }))
    }

    /// Wraps credentials and signs them together with the transport-key
    /// fingerprint of the presenting peer.
    pub fn assemble(
        holder: &DidSigner<'_>,
        credentials: Vec<VerifiableCredential>,
        challenge: &Fingerprint,
    ) -> Self {
        let mut vp = Self {
            context: vec![VC_CONTEXT.into()],
            types: vec!["VerifiablePresentation".into()],
            holder: holder.did.into(),
            credentials,
            proof: None,
        };
        let vm = holder.verification_method();
        let challenge = challenge.to_hex();
        let sig = keys::sign(holder.key, PRESENTATION_DOMAIN, &vp.payload(&vm, &challenge));
        vp.proof = Some(Proof {
            kind: PROOF_TYPE.into(),
            verification_method: vm,
            challenge: Some(challenge),
            proof_value: b64url(&sig.to_bytes()),
        });
        vp
    }
}

fn map_resolve(e: ResolveError) -> CredentialError {
    match e {
        ResolveError::NotFound => CredentialError::UnresolvableIssuer,
        ResolveError::Unavailable(m) => CredentialError::RegistryUnavailable(m),
    }
}

/// Verifies one credential. Self-issued credentials (issuer is this node's
/// DID) are checked against the local DID key; all others resolve the issuer
/// DID, reusing `issuer_docs` so each distinct issuer is looked up once.
pub fn verify_credential<R: DidResolver + ?Sized>(
    vc: &VerifiableCredential,
    resolver: &R,
    trusted: &TrustedIssuerList,
    me: &SelfIdentity,
    issuer_docs: &mut BTreeMap<String, DidDocument>,
    counts: &mut VerifyCounts,
) -> Result<AttributeBag, CredentialError> {
    if vc.subject.claims.is_empty() {
        return Err(CredentialError::EmptyClaims);
    }
    let proof = vc.proof.as_ref().ok_or(CredentialError::BadSignature)?;
    let (vm_did, kid) =
        split_verification_method(&proof.verification_method).ok_or(CredentialError::BadSignature)?;
    if vm_did != vc.issuer {
        return Err(CredentialError::BadSignature);
    }
    let sig = proof.signature().ok_or(CredentialError::BadSignature)?;
    let payload = vc.payload(&proof.verification_method);

    if vc.issuer == me.did {
        if kid != me.did_key_id
            || !keys::verify(&me.did_key, CREDENTIAL_DOMAIN, &payload, &sig, counts)
        {
            return Err(CredentialError::BadSignature);
        }
        if !trusted.contains(SELF_ISSUER) {
            return Err(CredentialError::UntrustedIssuer);
        }
        return vc.bag();
    }

    if !issuer_docs.contains_key(&vc.issuer) {
        counts.registry_lookups += 1;
        let doc = resolver.resolve(&vc.issuer).map_err(map_resolve)?;
        issuer_docs.insert(vc.issuer.clone(), doc);
    }
    let key = issuer_docs[&vc.issuer]
        .key(kid)
        .ok_or(CredentialError::BadSignature)?;
    if !keys::verify(key, CREDENTIAL_DOMAIN, &payload, &sig, counts) {
        return Err(CredentialError::BadSignature);
    }
    let accredited = trusted.contains(&vc.issuer)
        || resolver.is_accredited(&vc.issuer).map_err(map_resolve)?;
    if !accredited {
        return Err(CredentialError::UntrustedIssuer);
    }
    vc.bag()
}

/// Verifies a presentation and its credentials.
///
/// The holder proof must carry `expected` as its challenge and verify under
/// a key of the holder DID; otherwise the whole presentation is rejected.
/// Individual credentials that fail are dropped. Registry use: one lookup
/// for the holder plus one per distinct non-local issuer DID.
pub fn verify_presentation<R: DidResolver + ?Sized>(
    vp: &VerifiablePresentation,
    expected: &Fingerprint,
    resolver: &R,
    trusted: &TrustedIssuerList,
    me: &SelfIdentity,
    counts: &mut VerifyCounts,
) -> Result<Vec<AttributeBag>, CredentialError> {
    let invalid = |m: &str| CredentialError::HolderProofInvalid(m.into());
    let proof = vp.proof.as_ref().ok_or_else(|| invalid("missing proof"))?;
    let challenge = proof.challenge.as_deref().ok_or_else(|| invalid("missing challenge"))?;
    if challenge != expected.to_hex() {
        return Err(CredentialError::HolderMismatch);
    }
    let (vm_did, kid) = split_verification_method(&proof.verification_method)
        .ok_or_else(|| invalid("bad verification method"))?;
    if vm_did != vp.holder {
        return Err(invalid("verification method is not the holder's"));
    }
    let sig = proof.signature().ok_or_else(|| invalid("bad proof value"))?;

    counts.registry_lookups += 1;
    let holder_doc = match resolver.resolve(&vp.holder) {
        Ok(doc) => doc,
        Err(ResolveError::NotFound) => return Err(invalid("holder DID not registered")),
        Err(ResolveError::Unavailable(m)) => return Err(CredentialError::RegistryUnavailable(m)),
    };
    let key = holder_doc.key(kid).ok_or_else(|| invalid("unknown holder key"))?;
    let payload = vp.payload(&proof.verification_method, challenge);
    if !keys::verify(key, PRESENTATION_DOMAIN, &payload, &sig, counts) {
        return Err(invalid("signature does not verify"));
    }

    let mut issuer_docs = BTreeMap::new();
    let mut bags = Vec::new();
    for vc in &vp.credentials {
        if vc.subject.id != vp.holder {
            continue;
        }
        match verify_credential(vc, resolver, trusted, me, &mut issuer_docs, counts) {
            Ok(bag) => bags.push(bag),
            Err(e @ CredentialError::RegistryUnavailable(_)) => return Err(e),
            Err(_) => {}
        }
    }
    if bags.is_empty() {
        return Err(CredentialError::EmptyAfterFiltering);
    }
    Ok(bags)
}
