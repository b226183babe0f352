//! Requester side of the protocol: obtains session tokens, fetches files on
//! demand through a bounded in-memory cache, and countersigns the log
//! blocks hosts propose.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use lru::LruCache;
use rand::rngs::OsRng;
use rand::RngCore;
use sha2::{Digest, Sha256};

use datavault_core::accesslog::countersign;
use datavault_core::credential::{VerifiablePresentation, CredentialError};
use datavault_core::keys::key_hex;
use datavault_core::token::{Claims, DirectoryTree, SessionToken, TokenError};
use datavault_core::wire::{
    self, AccessToken, AccessibleFilesRequest, CredentialOffer, FailureReason, FileRequest, LogMessage, Message,
};
use datavault_core::VaultPath;

use crate::context::NodeContext;
use crate::endpoint::{Endpoint, EndpointError, Peer};
use crate::host::token_kind;
use crate::metrics::RequestRecord;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{0}")]
    Endpoint(#[from] EndpointError),
    #[error("request failed: {reason:?}{}", detail.as_ref().map(|d| format!(" ({d})")).unwrap_or_default())]
    Failed {
        reason: FailureReason,
        detail: Option<String>,
    },
    #[error("vault is locked")]
    Locked,
    #[error("unexpected reply: {0}")]
    Unexpected(&'static str),
    #[error("received file does not match its digest")]
    Integrity,
    #[error("session token unreadable: {0}")]
    Token(#[from] TokenError),
    #[error("credential error: {0}")]
    Credential(#[from] CredentialError),
}

impl ClientError {
    pub fn reason(&self) -> Option<FailureReason> {
        match self {
            ClientError::Failed { reason, .. } => Some(*reason),
            _ => None,
        }
    }
}

/// Which access tokens an accessible-files request carries.
#[derive(Debug, Clone, PartialEq)]
pub enum TokenChoice {
    /// Every attestation bound to this node plus one presentation of all
    /// held credentials.
    Credentials,
    Attestations,
    Presentation,
    /// The cached session token for the peer, even if it has expired.
    Session,
    /// No tokens at all.
    Empty,
    Explicit(Vec<AccessToken>),
}

/// A session token with its decoded claims.
#[derive(Debug, Clone)]
pub struct Session {
    pub token: SessionToken,
    pub claims: Claims,
}

impl Session {
    pub fn tree(&self) -> &DirectoryTree {
        &self.claims.sub_tree
    }
}

type PeerId = [u8; 32];
type FileCache = LruCache<(PeerId, VaultPath), Arc<Vec<u8>>>;

pub struct Client {
    ep: Endpoint,
    ctx: Arc<NodeContext>,
    cache: Mutex<FileCache>,
    sessions: Mutex<HashMap<PeerId, Session>>,
    afr_gate: Mutex<()>,
    peer_gates: Mutex<HashMap<PeerId, Arc<Mutex<()>>>>,
}

impl std::fmt::Debug for Client {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Client").field("ep", &self.ep).finish_non_exhaustive()
    }
}

fn new_request_id() -> u64 {
    OsRng.next_u64() >> 11
}

impl Client {
    pub fn new(ep: Endpoint, ctx: Arc<NodeContext>, cache_capacity: usize) -> Self {
        let cap = NonZeroUsize::new(cache_capacity.max(1)).expect("nonzero");
        Self {
            ep,
            ctx,
            cache: Mutex::new(LruCache::new(cap)),
            sessions: Mutex::new(HashMap::new()),
            afr_gate: Mutex::new(()),
            peer_gates: Mutex::new(HashMap::new()),
        }
    }

    pub fn session(&self, peer: &Peer) -> Option<Session> {
        self.sessions.lock().expect("session lock poisoned").get(&peer.key.to_bytes()).cloned()
    }

    pub fn forget_session(&self, peer: &Peer) {
        self.sessions.lock().expect("session lock poisoned").remove(&peer.key.to_bytes());
    }

    pub fn forget_all_sessions(&self) {
        self.sessions.lock().expect("session lock poisoned").clear();
    }

    pub fn clear_cache(&self) {
        self.cache.lock().expect("cache lock poisoned").clear();
    }

    pub fn cached(&self, peer: &Peer, path: &VaultPath) -> bool {
        self.cache.lock().expect("cache lock poisoned").contains(&(peer.key.to_bytes(), path.clone()))
    }

    /// Builds the token list for `choice`.
    pub fn tokens(&self, peer: &Peer, choice: &TokenChoice) -> Result<Vec<AccessToken>, ClientError> {
        let guard = self.ctx.wallet();
        let w = guard.as_ref().ok_or(ClientError::Locked)?;
        let presentation = || -> Vec<AccessToken> {
            if w.credentials.is_empty() {
                return Vec::new();
            }
            let vp = VerifiablePresentation::assemble(&w.identity.did_signer(), w.credentials.clone(), &w.identity.fingerprint());
            vec![AccessToken::Presentation(vp)]
        };
        let attestations = || w.own_attestations().into_iter().map(AccessToken::Attestation).collect::<Vec<_>>();
        Ok(match choice {
            TokenChoice::Credentials => {
                let mut t = attestations();
                t.extend(presentation());
                t
            }
            TokenChoice::Attestations => attestations(),
            TokenChoice::Presentation => presentation(),
            TokenChoice::Session => self.session(peer).map(|s| vec![AccessToken::Session(s.token)]).unwrap_or_default(),
            TokenChoice::Empty => Vec::new(),
            TokenChoice::Explicit(t) => t.clone(),
        })
    }

    /// Runs one accessible-files exchange, countersigns the proposed log
    /// block, and caches the resulting session.
    pub fn accessible_files(&self, peer: &Peer, choice: &TokenChoice) -> Result<Session, ClientError> {
        let tokens = self.tokens(peer, choice)?;
        let _gate = self.afr_gate.lock().expect("gate lock poisoned");
        let started = Instant::now();
        let kind = token_kind(&tokens);
        let req = AccessibleFilesRequest {
            request_id: new_request_id(),
            timestamp: self.ctx.clock.now_ms(),
            access_tokens: tokens,
            chain_tip: self.ctx.chains().tip(),
        };
        let msg = Message::AccessibleFilesRequest(req.clone());
        let request_bytes = wire::encode(&msg).map(|b| b.len()).unwrap_or(0);
        let waiter = self.ep.subscribe(peer, req.request_id);
        let result = self.ep.send(peer, &msg).map_err(ClientError::from).and_then(|()| {
            match waiter.recv(self.ctx.request_timeout)? {
                Message::AccessibleFilesResponse(r) => {
                    let claims = r.session_token.peek_claims()?;
                    Ok(Session {
                        token: r.session_token,
                        claims,
                    })
                }
                Message::FileRequestFailed(f) => Err(ClientError::Failed {
                    reason: f.reason,
                    detail: f.detail,
                }),
                _ => Err(ClientError::Unexpected("expected an accessible-files response")),
            }
        });
        self.ctx.metrics.record(RequestRecord::ClientAccessibleFiles {
            peer: key_hex(&peer.key),
            token_kind: kind,
            request_bytes,
            round_trip_ms: started.elapsed().as_secs_f64() * 1000.0,
            ok: result.is_ok(),
        });
        let session = result?;
        match waiter.recv(self.ctx.request_timeout) {
            Ok(Message::LogProposal(p)) => {
                self.ctx.countersign_proposal(&self.ep, peer, &p);
            }
            Ok(_) => log::warn!("unexpected message instead of a log proposal from {}", peer.addr),
            Err(e) => log::warn!("no log proposal from {}: {e}", peer.addr),
        }
        self.sessions
            .lock()
            .expect("session lock poisoned")
            .insert(peer.key.to_bytes(), session.clone());
        Ok(session)
    }

    fn peer_gate(&self, peer: &Peer) -> Arc<Mutex<()>> {
        self.peer_gates
            .lock()
            .expect("gate lock poisoned")
            .entry(peer.key.to_bytes())
            .or_default()
            .clone()
    }

    /// One file request with `session`, bypassing the cache and the
    /// expired-token retry.
    pub fn file_request(&self, peer: &Peer, session: &Session, path: &VaultPath) -> Result<Vec<u8>, ClientError> {
        let req = FileRequest {
            request_id: new_request_id(),
            session_token: session.token.clone(),
            path: path.clone(),
        };
        self.ctx.metrics.update(|t| t.wire_file_requests += 1);
        match self.ep.request(peer, &Message::FileRequest(req), self.ctx.request_timeout)? {
            Message::FileResponse(r) => {
                if hex::encode(Sha256::digest(&r.payload)) != r.sha256 || r.path != *path {
                    return Err(ClientError::Integrity);
                }
                Ok(r.payload)
            }
            Message::FileRequestFailed(f) => Err(ClientError::Failed {
                reason: f.reason,
                detail: f.detail,
            }),
            _ => Err(ClientError::Unexpected("expected a file response")),
        }
    }

    /// Returns the file from the cache, or fetches it. Without a session,
    /// or when the host reports the session expired, a fresh
    /// accessible-files request with the wallet's credentials runs first.
    pub fn fetch(&self, peer: &Peer, path: &VaultPath) -> Result<Arc<Vec<u8>>, ClientError> {
        let started = Instant::now();
        let key = (peer.key.to_bytes(), path.clone());
        if let Some(hit) = self.cache.lock().expect("cache lock poisoned").get(&key).cloned() {
            self.ctx.metrics.record(RequestRecord::ClientFetch {
                peer: key_hex(&peer.key),
                path: path.to_string(),
                cache_hit: true,
                bytes: hit.len(),
                round_trip_ms: started.elapsed().as_secs_f64() * 1000.0,
                ok: true,
            });
            return Ok(hit);
        }
        let gate = self.peer_gate(peer);
        let _one_in_flight = gate.lock().expect("gate lock poisoned");
        let result = (|| {
            let session = match self.session(peer) {
                Some(s) => s,
                None => self.accessible_files(peer, &TokenChoice::Credentials)?,
            };
            match self.file_request(peer, &session, path) {
                Err(ClientError::Failed {
                    reason: FailureReason::ExpiredToken,
                    ..
                }) => {
                    self.ctx.metrics.update(|t| t.expired_token_retries += 1);
                    self.forget_session(peer);
                    let fresh = self.accessible_files(peer, &TokenChoice::Credentials)?;
                    self.file_request(peer, &fresh, path)
                }
                other => other,
            }
        })();
        self.ctx.metrics.record(RequestRecord::ClientFetch {
            peer: key_hex(&peer.key),
            path: path.to_string(),
            cache_hit: false,
            bytes: result.as_ref().map(|b| b.len()).unwrap_or(0),
            round_trip_ms: started.elapsed().as_secs_f64() * 1000.0,
            ok: result.is_ok(),
        });
        let bytes = Arc::new(result?);
        self.cache.lock().expect("cache lock poisoned").put(key, bytes.clone());
        Ok(bytes)
    }

    /// Sends a credential (typically a freshly issued SIC) to a peer.
    pub fn offer_credential(&self, peer: &Peer, offer: CredentialOffer) -> Result<(), ClientError> {
        self.ep.send(peer, &Message::CredentialOffer(offer))?;
        Ok(())
    }
}

impl NodeContext {
    /// Countersigns a block proposed by `peer` if it extends this node's
    /// chain, appends it, and returns the agreement to the host.
    pub fn countersign_proposal(&self, ep: &Endpoint, peer: &Peer, msg: &LogMessage) -> bool {
        if msg.block.host != peer.key.to_bytes() {
            log::warn!("log proposal from {} names another host", peer.addr);
            return false;
        }
        let signed = {
            let guard = self.wallet();
            let Some(w) = guard.as_ref() else {
                log::warn!("cannot countersign while locked");
                return false;
            };
            let mut chain = self.chains();
            let signed = match countersign(&msg.block, w.identity.transport_key(), Some(chain.tip())) {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("refusing to countersign block from {}: {e}", peer.addr);
                    return false;
                }
            };
            if let Err(e) = chain.append(signed.clone()) {
                log::warn!("countersigned block not appended: {e}");
                return false;
            }
            self.persist_chain(&chain);
            signed
        };
        let reply = Message::LogAgreement(LogMessage {
            request_id: msg.request_id,
            block: signed,
        });
        if let Err(e) = ep.send(peer, &reply) {
            log::warn!("log agreement to {} failed: {e}", peer.addr);
        }
        true
    }

    /// Stores a credential a peer issued to this node.
    pub fn accept_credential(&self, peer: &Peer, offer: CredentialOffer) -> bool {
        let vc = offer.credential;
        let res = self.update_wallet(|w| {
            if vc.subject.id != w.identity.did() {
                return false;
            }
            w.add_credential(vc)
        });
        match res {
            Ok(stored) => stored,
            Err(e) => {
                log::warn!("credential from {} not stored: {e}", peer.addr);
                false
            }
        }
    }
}
