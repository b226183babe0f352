//! Host-signed session tokens and the directory trees they carry.
//!
//! Compact form: `b64url(header) "." b64url(payload) "." b64url(signature)`,
//! unpadded URL-safe base64. The header is `{"alg":"EdDSA","typ":"JWT"}`;
//! the payload holds the claims `sub_tree`, `hfp` (hex SHA-256 of the
//! holder's transport key), `iat` and `exp` (unix seconds). The signature is
//! Ed25519 over the ASCII bytes `header "." payload`, as in a JWS.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};

use crate::encoding::{b64url, b64url_decode, canonical_json};
use crate::keys::{Fingerprint, VerifyCounts};
use crate::path::VaultPath;

pub const DEFAULT_TTL_SECS: u64 = 300;

/// A folder's children keyed by name. Folders serialize as JSON objects,
/// files as their size in bytes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DirectoryTree {
    pub children: BTreeMap<String, TreeNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    File(u64),
    Folder(DirectoryTree),
}

impl DirectoryTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    fn folder_mut(&mut self, path: &VaultPath) -> Option<&mut DirectoryTree> {
        let mut cur = self;
        for name in path.components() {
            let node = cur
                .children
                .entry(name.into())
                .or_insert_with(|| TreeNode::Folder(DirectoryTree::new()));
            cur = match node {
                TreeNode::Folder(t) => t,
                TreeNode::File(_) => return None,
            };
        }
        Some(cur)
    }

    /// Adds a folder and any missing ancestors. Fails if a file is in the way.
    pub fn insert_folder(&mut self, path: &VaultPath) -> bool {
        self.folder_mut(path).is_some()
    }

    /// Adds a file and any missing ancestor folders.
    pub fn insert_file(&mut self, path: &VaultPath, size: u64) -> bool {
        let (Some(parent), Some(name)) = (path.parent(), path.file_name()) else {
            return false;
        };
        match self.folder_mut(&parent) {
            Some(folder) => {
                if matches!(folder.children.get(name), Some(TreeNode::Folder(_))) {
                    return false;
                }
                folder.children.insert(name.into(), TreeNode::File(size));
                true
            }
            None => false,
        }
    }

    pub fn get(&self, path: &VaultPath) -> Option<&TreeNode> {
        let mut comps = path.components().peekable();
        let mut cur = self;
        while let Some(name) = comps.next() {
            let node = cur.children.get(name)?;
            if comps.peek().is_none() {
                return Some(node);
            }
            match node {
                TreeNode::Folder(t) => cur = t,
                TreeNode::File(_) => return None,
            }
        }
        None
    }

    /// True iff `path` is a file in the tree. Folders are listable only.
    pub fn contains(&self, path: &VaultPath) -> bool {
        matches!(self.get(path), Some(TreeNode::File(_)))
    }

    /// The folder at `path` (the tree itself for the root).
    pub fn folder(&self, path: &VaultPath) -> Option<&DirectoryTree> {
        if path.is_root() {
            return Some(self);
        }
        match self.get(path)? {
            TreeNode::Folder(t) => Some(t),
            TreeNode::File(_) => None,
        }
    }

    /// Every file with its size, in canonical order.
    pub fn files(&self) -> Vec<(VaultPath, u64)> {
        let mut out = Vec::new();
        self.walk(&VaultPath::root(), &mut |p, n| {
            if let TreeNode::File(size) = n {
                out.push((p.clone(), *size));
            }
        });
        out
    }

    /// Every folder below the root, in canonical order.
    pub fn folders(&self) -> Vec<VaultPath> {
        let mut out = Vec::new();
        self.walk(&VaultPath::root(), &mut |p, n| {
            if let TreeNode::Folder(_) = n {
                out.push(p.clone());
            }
        });
        out
    }

    fn walk(&self, base: &VaultPath, f: &mut impl FnMut(&VaultPath, &TreeNode)) {
        for (name, node) in &self.children {
            let Ok(path) = base.join(name) else { continue };
            f(&path, node);
            if let TreeNode::Folder(t) = node {
                t.walk(&path, f);
            }
        }
    }

    /// Checks every name is a single well-formed path component.
    pub fn validate(&self) -> bool {
        self.children.iter().all(|(name, node)| {
            VaultPath::parse(name).is_ok_and(|p| p.components().count() == 1)
                && match node {
                    TreeNode::File(_) => true,
                    TreeNode::Folder(t) => t.validate(),
                }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TokenError {
    #[error("token ttl must be positive")]
    ZeroTtl,
    #[error("token is not in compact form")]
    Malformed,
    #[error("token signature does not verify")]
    BadSignature,
    #[error("token is bound to a different holder")]
    HolderMismatch,
    #[error("token expired")]
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    alg: String,
    typ: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Claims {
    pub sub_tree: DirectoryTree,
    pub hfp: Fingerprint,
    pub iat: u64,
    pub exp: u64,
}

/// A session token in compact form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionToken(pub String);

impl SessionToken {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Reads the claims without checking anything. For clients inspecting
    /// their own tokens.
    pub fn peek_claims(&self) -> Result<Claims, TokenError> {
        let (_, payload, _) = split(&self.0)?;
        decode_claims(payload)
    }
}

fn header_b64() -> String {
    b64url(&canonical_json(&Header {
        alg: "EdDSA".into(),
        typ: "JWT".into(),
    }))
}

fn split(token: &str) -> Result<(&str, &str, &str), TokenError> {
    let mut parts = token.split('.');
    match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some(h), Some(p), Some(s), None) => Ok((h, p, s)),
        _ => Err(TokenError::Malformed),
    }
}

fn decode_claims(payload: &str) -> Result<Claims, TokenError> {
    let bytes = b64url_decode(payload).ok_or(TokenError::Malformed)?;
    let claims: Claims = serde_json::from_slice(&bytes).map_err(|_| TokenError::Malformed)?;
    if !claims.sub_tree.validate() {
        return Err(TokenError::Malformed);
    }
    Ok(claims)
}

pub fn mint(
    subtree: DirectoryTree,
    holder: Fingerprint,
    ttl_secs: u64,
    now: u64,
    host_key: &SigningKey,
) -> Result<SessionToken, TokenError> {
    if ttl_secs == 0 {
        return Err(TokenError::ZeroTtl);
    }
    let claims = Claims {
        sub_tree: subtree,
        hfp: holder,
        iat: now,
        exp: now.saturating_add(ttl_secs),
    };
    Ok(mint_claims(&claims, host_key))
}

pub(crate) fn mint_claims(claims: &Claims, host_key: &SigningKey) -> SessionToken {
    let mut signing_input = header_b64();
    signing_input.push('.');
    signing_input.push_str(&b64url(&canonical_json(claims)));
    let sig = host_key.sign(signing_input.as_bytes());
    signing_input.push('.');
    signing_input.push_str(&b64url(&sig.to_bytes()));
    SessionToken(signing_input)
}

/// Checks signature, then holder binding, then expiry (`now >= exp` is
/// expired). Counts one signature check.
pub fn verify(
    token: &SessionToken,
    expected: &Fingerprint,
    now: u64,
    host_key: &VerifyingKey,
    counts: &mut VerifyCounts,
) -> Result<Claims, TokenError> {
    let (h, p, s) = split(&token.0)?;
    let header: Header = b64url_decode(h)
        .and_then(|b| serde_json::from_slice(&b).ok())
        .ok_or(TokenError::Malformed)?;
    if header.alg != "EdDSA" {
        return Err(TokenError::Malformed);
    }
    let sig = b64url_decode(s)
        .and_then(|b| Signature::from_slice(&b).ok())
        .ok_or(TokenError::Malformed)?;
    let signing_input = &token.0[..h.len() + 1 + p.len()];
    counts.signatures += 1;
    host_key
        .verify_strict(signing_input.as_bytes(), &sig)
        .map_err(|_| TokenError::BadSignature)?;
    let claims = decode_claims(p)?;
    if claims.hfp != *expected {
        return Err(TokenError::HolderMismatch);
    }
    if now >= claims.exp {
        return Err(TokenError::Expired);
    }
    Ok(claims)
}
