//! Message codec.
//!
//! ```text
//! tag: u8 | body_len: u32 BE | body: canonical JSON | payload: bytes
//! ```
//!
//! | tag  | message                 | payload    |
//! |------|-------------------------|------------|
//! | 0x01 | AccessibleFilesRequest  | empty      |
//! | 0x02 | AccessibleFilesResponse | empty      |
//! | 0x03 | FileRequest             | empty      |
//! | 0x04 | FileResponse            | file bytes |
//! | 0x05 | FileRequestFailed       | empty      |
//! | 0x06 | LogProposal             | empty      |
//! | 0x07 | LogAgreement            | empty      |
//! | 0x08 | CredentialOffer         | empty      |

use alloc::string::String;
use alloc::vec::Vec;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::accesslog::{AccessLogBlock, ChainTip};
use crate::credential::{Attestation, VerifiableCredential, VerifiablePresentation};
use crate::encoding::canonical_json;
use crate::path::VaultPath;
use crate::token::SessionToken;
use crate::MAX_FILE_SIZE;

pub const TAG_ACCESSIBLE_FILES_REQUEST: u8 = 0x01;
pub const TAG_ACCESSIBLE_FILES_RESPONSE: u8 = 0x02;
pub const TAG_FILE_REQUEST: u8 = 0x03;
pub const TAG_FILE_RESPONSE: u8 = 0x04;
pub const TAG_FILE_REQUEST_FAILED: u8 = 0x05;
pub const TAG_LOG_PROPOSAL: u8 = 0x06;
pub const TAG_LOG_AGREEMENT: u8 = 0x07;
pub const TAG_CREDENTIAL_OFFER: u8 = 0x08;

/// Largest JSON body accepted.
pub const MAX_BODY_LEN: usize = 1 << 20;
const HEADER_LEN: usize = 5;
/// Largest encoded message.
pub const MAX_MESSAGE_LEN: usize = HEADER_LEN + MAX_BODY_LEN + MAX_FILE_SIZE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum AccessToken {
    Attestation(Attestation),
    Presentation(VerifiablePresentation),
    Session(SessionToken),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessibleFilesRequest {
    pub request_id: u64,
    pub timestamp: u64,
    pub access_tokens: Vec<AccessToken>,
    /// Tip of the requester's personal log chain, for the host to link the
    /// log block to.
    pub chain_tip: ChainTip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessibleFilesResponse {
    pub request_id: u64,
    pub timestamp: u64,
    pub session_token: SessionToken,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRequest {
    pub request_id: u64,
    pub session_token: SessionToken,
    pub path: VaultPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileResponse {
    pub request_id: u64,
    pub path: VaultPath,
    /// Hex SHA-256 of the payload.
    pub sha256: String,
    #[serde(skip)]
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FailureReason {
    ExpiredToken,
    AccessDenied,
    UnknownPath,
    FileTooLarge,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRequestFailed {
    pub request_id: u64,
    pub reason: FailureReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogMessage {
    pub request_id: u64,
    pub block: AccessLogBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CredentialOffer {
    pub credential: VerifiableCredential,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    AccessibleFilesRequest(AccessibleFilesRequest),
    AccessibleFilesResponse(AccessibleFilesResponse),
    FileRequest(FileRequest),
    FileResponse(FileResponse),
    FileRequestFailed(FileRequestFailed),
    /// Host-signed log block sent to the requester for countersigning.
    LogProposal(LogMessage),
    /// The countersigned block returned to the host.
    LogAgreement(LogMessage),
    /// A self-issued credential delivered to its subject.
    CredentialOffer(CredentialOffer),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("malformed message: {0}")]
    Malformed(&'static str),
    #[error("payload exceeds the file size cap")]
    PayloadTooLarge,
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Self::AccessibleFilesRequest(_) => TAG_ACCESSIBLE_FILES_REQUEST,
            Self::AccessibleFilesResponse(_) => TAG_ACCESSIBLE_FILES_RESPONSE,
            Self::FileRequest(_) => TAG_FILE_REQUEST,
            Self::FileResponse(_) => TAG_FILE_RESPONSE,
            Self::FileRequestFailed(_) => TAG_FILE_REQUEST_FAILED,
            Self::LogProposal(_) => TAG_LOG_PROPOSAL,
            Self::LogAgreement(_) => TAG_LOG_AGREEMENT,
            Self::CredentialOffer(_) => TAG_CREDENTIAL_OFFER,
        }
    }

    pub fn request_id(&self) -> Option<u64> {
        match self {
            Self::AccessibleFilesRequest(m) => Some(m.request_id),
            Self::AccessibleFilesResponse(m) => Some(m.request_id),
            Self::FileRequest(m) => Some(m.request_id),
            Self::FileResponse(m) => Some(m.request_id),
            Self::FileRequestFailed(m) => Some(m.request_id),
            Self::LogProposal(m) | Self::LogAgreement(m) => Some(m.request_id),
            Self::CredentialOffer(_) => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::AccessibleFilesRequest(_) => "accessibleFilesRequest",
            Self::AccessibleFilesResponse(_) => "accessibleFilesResponse",
            Self::FileRequest(_) => "fileRequest",
            Self::FileResponse(_) => "fileResponse",
            Self::FileRequestFailed(_) => "fileRequestFailed",
            Self::LogProposal(_) => "logProposal",
            Self::LogAgreement(_) => "logAgreement",
            Self::CredentialOffer(_) => "credentialOffer",
        }
    }
}

pub fn encode(msg: &Message) -> Result<Vec<u8>, WireError> {
    let (body, payload): (Vec<u8>, &[u8]) = match msg {
        Message::AccessibleFilesRequest(m) => (canonical_json(m), &[]),
        Message::AccessibleFilesResponse(m) => (canonical_json(m), &[]),
        Message::FileRequest(m) => (canonical_json(m), &[]),
        Message::FileResponse(m) => {
            if m.payload.len() > MAX_FILE_SIZE {
                return Err(WireError::PayloadTooLarge);
            }
            (canonical_json(m), &m.payload)
        }
        Message::FileRequestFailed(m) => (canonical_json(m), &[]),
        Message::LogProposal(m) | Message::LogAgreement(m) => (canonical_json(m), &[]),
        Message::CredentialOffer(m) => (canonical_json(m), &[]),
    };
    if body.len() > MAX_BODY_LEN {
        return Err(WireError::Malformed("body too long"));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + body.len() + payload.len());
    out.push(msg.tag());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(payload);
    Ok(out)
}

fn body<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, WireError> {
    serde_json::from_slice(bytes).map_err(|_| WireError::Malformed("bad JSON body"))
}

pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Malformed("truncated header"));
    }
    let tag = bytes[0];
    let len = u32::from_be_bytes([bytes[1], bytes[2], bytes[3], bytes[4]]) as usize;
    if len > MAX_BODY_LEN || bytes.len() - HEADER_LEN < len {
        return Err(WireError::Malformed("truncated body"));
    }
    let json = &bytes[HEADER_LEN..HEADER_LEN + len];
    let payload = &bytes[HEADER_LEN + len..];
    if tag != TAG_FILE_RESPONSE && !payload.is_empty() {
        return Err(WireError::Malformed("unexpected payload"));
    }
    Ok(match tag {
        TAG_ACCESSIBLE_FILES_REQUEST => Message::AccessibleFilesRequest(body(json)?),
        TAG_ACCESSIBLE_FILES_RESPONSE => Message::AccessibleFilesResponse(body(json)?),
        TAG_FILE_REQUEST => Message::FileRequest(body(json)?),
        TAG_FILE_RESPONSE => {
            if payload.len() > MAX_FILE_SIZE {
                return Err(WireError::PayloadTooLarge);
            }
            let mut m: FileResponse = body(json)?;
            m.payload = payload.to_vec();
            Message::FileResponse(m)
        }
        TAG_FILE_REQUEST_FAILED => Message::FileRequestFailed(body(json)?),
        TAG_LOG_PROPOSAL => Message::LogProposal(body(json)?),
        TAG_LOG_AGREEMENT => Message::LogAgreement(body(json)?),
        TAG_CREDENTIAL_OFFER => Message::CredentialOffer(body(json)?),
        _ => return Err(WireError::Malformed("unknown message tag")),
    })
}
