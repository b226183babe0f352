//! Host side of the protocol: answers accessible-files and file requests
//! and collects countersignatures on proposed log blocks.

use std::sync::Arc;
use std::time::Instant;

use sha2::{Digest, Sha256};

use datavault_core::accesslog::{propose_block, AccessLogBlock};
use datavault_core::credential::{verify_attestation, verify_presentation};
use datavault_core::keys::key_hex;
use datavault_core::policy::AccessMode;
use datavault_core::token::{self, DirectoryTree, TokenError};
use datavault_core::wire::{
    AccessToken, AccessibleFilesRequest, AccessibleFilesResponse, FailureReason, FileRequest, FileRequestFailed,
    FileResponse, LogMessage, Message,
};
use datavault_core::{VaultPath, VerifyCounts, MAX_FILE_SIZE};

use crate::context::NodeContext;
use crate::endpoint::{Endpoint, Peer};
use crate::metrics::{RequestRecord, TokenKind};
use crate::vault::VaultError;

fn failed(request_id: u64, reason: FailureReason, detail: impl Into<String>) -> Message {
    Message::FileRequestFailed(FileRequestFailed {
        request_id,
        reason,
        detail: Some(detail.into()),
    })
}

pub fn token_kind(tokens: &[AccessToken]) -> TokenKind {
    let mut kinds = tokens.iter().map(|t| match t {
        AccessToken::Attestation(_) => TokenKind::Attestation,
        AccessToken::Presentation(_) => TokenKind::Presentation,
        AccessToken::Session(_) => TokenKind::Session,
    });
    let Some(first) = kinds.next() else {
        return TokenKind::None;
    };
    if kinds.all(|k| k == first) {
        first
    } else {
        TokenKind::Mixed
    }
}

fn merge(into: &mut DirectoryTree, other: &DirectoryTree) {
    for folder in other.folders() {
        into.insert_folder(&folder);
    }
    for (file, size) in other.files() {
        into.insert_file(&file, size);
    }
}

/// Outcome of an accessible-files request, before it is sent.
#[derive(Debug)]
pub struct Grant {
    pub response: Message,
    pub proposal: Option<AccessLogBlock>,
    pub counts: VerifyCounts,
}

#[derive(Debug, Clone)]
pub struct Host {
    ctx: Arc<NodeContext>,
}

impl Host {
    pub fn new(ctx: Arc<NodeContext>) -> Self {
        Self { ctx }
    }

    /// Verifies the presented tokens, computes the accessible subtree, mints
    /// a session token bound to the requester and proposes one log block.
    pub fn accessible_files(&self, peer: &Peer, req: &AccessibleFilesRequest) -> Grant {
        let ctx = &self.ctx;
        let mut counts = VerifyCounts::default();
        let guard = ctx.wallet();
        let Some(wallet) = guard.as_ref() else {
            return Grant {
                response: failed(req.request_id, FailureReason::AccessDenied, "vault is locked"),
                proposal: None,
                counts,
            };
        };
        let me = wallet.identity.self_identity();
        let holder = peer.fingerprint();
        let now = ctx.clock.now_secs();
        let mut bags = Vec::new();
        let mut session_trees = Vec::new();
        let mut cap: Option<u64> = None;
        for t in &req.access_tokens {
            match t {
                AccessToken::Attestation(a) => {
                    match verify_attestation(a, &holder, &wallet.trusted, &me, &mut counts) {
                        Ok(bag) => bags.push(bag),
                        Err(e) => log::debug!("attestation {} dropped: {e}", a.id()),
                    }
                }
                AccessToken::Presentation(vp) => {
                    match verify_presentation(vp, &holder, &*ctx.registry, &wallet.trusted, &me, &mut counts) {
                        Ok(b) => bags.extend(b),
                        Err(e) => log::debug!("presentation from {} dropped: {e}", vp.holder),
                    }
                }
                AccessToken::Session(st) => {
                    match token::verify(st, &holder, now, &wallet.identity.transport_public(), &mut counts) {
                        Ok(claims) => {
                            cap = Some(cap.map_or(claims.exp, |c| c.min(claims.exp)));
                            session_trees.push(claims.sub_tree);
                        }
                        Err(e) => log::debug!("session token dropped: {e}"),
                    }
                }
            }
        }
        let mut subtree = match ctx.vault.accessible_subtree(&bags, AccessMode::Read, &me.eval_context()) {
            Ok(t) => t,
            Err(e) => {
                return Grant {
                    response: failed(req.request_id, FailureReason::AccessDenied, e.to_string()),
                    proposal: None,
                    counts,
                }
            }
        };
        for t in &session_trees {
            merge(&mut subtree, t);
        }
        let ttl = match cap {
            Some(exp) => exp.saturating_sub(now).min(ctx.token_ttl_secs),
            None => ctx.token_ttl_secs,
        }
        .max(1);
        let mut granted: Vec<VaultPath> = subtree.folders();
        granted.extend(subtree.files().into_iter().map(|(p, _)| p));
        let session_token = token::mint(subtree, holder, ttl, now, wallet.identity.transport_key())
            .expect("ttl is positive");

        let block = {
            let mut chain = ctx.chains();
            let block = propose_block(
                wallet.identity.transport_key(),
                &peer.key,
                &granted,
                chain.tip(),
                req.chain_tip,
                now,
                None,
            );
            chain.append(block.clone()).expect("proposal extends own tip");
            ctx.persist_chain(&chain);
            block
        };
        ctx.metrics.update(|t| t.log_blocks_proposed += 1);
        Grant {
            response: Message::AccessibleFilesResponse(AccessibleFilesResponse {
                request_id: req.request_id,
                timestamp: req.timestamp,
                session_token,
            }),
            proposal: Some(block),
            counts,
        }
    }

    /// Checks the session token and the path, and reads the file.
    pub fn file_request(&self, peer: &Peer, req: &FileRequest, counts: &mut VerifyCounts) -> Message {
        let ctx = &self.ctx;
        let rid = req.request_id;
        let host_key = {
            let guard = ctx.wallet();
            match guard.as_ref() {
                Some(w) => w.identity.transport_public(),
                None => return failed(rid, FailureReason::AccessDenied, "vault is locked"),
            }
        };
        let claims = match token::verify(&req.session_token, &peer.fingerprint(), ctx.clock.now_secs(), &host_key, counts) {
            Ok(c) => c,
            Err(TokenError::Expired) => return failed(rid, FailureReason::ExpiredToken, "session token expired"),
            Err(TokenError::Malformed) => return failed(rid, FailureReason::Malformed, "session token malformed"),
            Err(e) => return failed(rid, FailureReason::AccessDenied, e.to_string()),
        };
        if !claims.sub_tree.contains(&req.path) {
            return failed(rid, FailureReason::AccessDenied, "path not covered by session token");
        }
        match ctx.vault.get(&req.path) {
            Ok(bytes) if bytes.len() > MAX_FILE_SIZE => failed(rid, FailureReason::FileTooLarge, "file exceeds cap"),
            Ok(bytes) => Message::FileResponse(FileResponse {
                request_id: rid,
                path: req.path.clone(),
                sha256: hex::encode(Sha256::digest(&bytes)),
                payload: bytes,
            }),
            Err(VaultError::UnknownPath(_)) => failed(rid, FailureReason::UnknownPath, "no such file"),
            Err(VaultError::Integrity(_)) => failed(rid, FailureReason::UnknownPath, "stored copy failed its integrity check"),
            Err(e) => failed(rid, FailureReason::AccessDenied, e.to_string()),
        }
    }

    pub fn serve_accessible_files(&self, ep: &Endpoint, peer: &Peer, req: &AccessibleFilesRequest) {
        let started = Instant::now();
        let grant = self.accessible_files(peer, req);
        let granted_files = match &grant.response {
            Message::AccessibleFilesResponse(r) => r.session_token.peek_claims().map(|c| c.sub_tree.files().len()).unwrap_or(0),
            _ => 0,
        };
        let request_bytes = datavault_core::wire::encode(&Message::AccessibleFilesRequest(req.clone()))
            .map(|b| b.len())
            .unwrap_or(0);
        self.ctx.metrics.record(RequestRecord::HostedAccessibleFiles {
            peer: key_hex(&peer.key),
            token_kind: token_kind(&req.access_tokens),
            tokens: req.access_tokens.len(),
            request_bytes,
            verifications: grant.counts.signatures,
            registry_lookups: grant.counts.registry_lookups,
            granted_files,
            handle_ms: started.elapsed().as_secs_f64() * 1000.0,
        });
        if let Err(e) = ep.send(peer, &grant.response) {
            log::warn!("response to {} failed: {e}", peer.addr);
            return;
        }
        if let Some(block) = grant.proposal {
            let msg = Message::LogProposal(LogMessage {
                request_id: req.request_id,
                block,
            });
            if let Err(e) = ep.send(peer, &msg) {
                log::warn!("log proposal to {} failed: {e}", peer.addr);
            }
        }
    }

    pub fn serve_file_request(&self, ep: &Endpoint, peer: &Peer, req: &FileRequest) {
        let started = Instant::now();
        let mut counts = VerifyCounts::default();
        let reply = self.file_request(peer, req, &mut counts);
        let sent = ep.send(peer, &reply);
        let (outcome, bytes) = match &reply {
            Message::FileResponse(r) => ("ok".to_string(), r.payload.len()),
            Message::FileRequestFailed(f) => (format!("{:?}", f.reason), 0),
            _ => ("unexpected".to_string(), 0),
        };
        if let Err(e) = &sent {
            log::warn!("file reply to {} failed: {e}", peer.addr);
        }
        self.ctx.metrics.record(RequestRecord::HostedFile {
            peer: key_hex(&peer.key),
            path: req.path.to_string(),
            outcome: if sent.is_ok() { outcome } else { "send_failed".into() },
            bytes,
            verifications: counts.signatures,
            transfer_ms: started.elapsed().as_secs_f64() * 1000.0,
        });
    }

    /// Accepts the requester's countersignature on a pending block.
    pub fn on_log_agreement(&self, peer: &Peer, msg: &LogMessage) -> bool {
        let block = &msg.block;
        if block.requester != peer.key.to_bytes() || block.host != self.ctx.transport_key.to_bytes() {
            return false;
        }
        let mut counts = VerifyCounts::default();
        if block.verify_host_signature(&mut counts).is_err() || block.verify_requester_signature(&mut counts) != Ok(true) {
            log::warn!("invalid countersignature from {}", peer.addr);
            return false;
        }
        let mut chain = self.ctx.chains();
        match chain.complete(block.clone()) {
            Ok(()) => {
                self.ctx.persist_chain(&chain);
                drop(chain);
                self.ctx.metrics.update(|t| t.log_blocks_countersigned += 1);
                true
            }
            Err(e) => {
                log::warn!("countersigned block from {} not applied: {e}", peer.addr);
                false
            }
        }
    }
}
