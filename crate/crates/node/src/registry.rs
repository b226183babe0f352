//! Mock verifiable data registry: a DID document store plus a trusted
//! issuers list, usable in-process or over HTTP/JSON.
//!
//! HTTP interface:
//!
//! ```text
//! GET  /did/{did}   -> 200 DidDocument | 404 {"error":"NotFound"}
//! PUT  /did/{did}   DidDocument -> 200 DidDocument | 400 {"error":"MalformedDocument", ...}
//! GET  /tir/{did}   -> 200 {"did": ..., "trusted": bool, "label": ...}
//! POST /tir         IssuerRecord -> 200 IssuerRecord | 404 {"error":"UnresolvableDid"}
//! ```

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use datavault_core::did::{DidDocument, DidResolver, ResolveError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuerRecord {
    pub did: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("DID not found")]
    NotFound,
    #[error("malformed DID document: {0}")]
    MalformedDocument(String),
    #[error("issuer DID is not resolvable")]
    UnresolvableDid,
    #[error("registry unavailable: {0}")]
    Unavailable(String),
}

/// Registry operations shared by the in-process store and the HTTP client.
pub trait Registry: DidResolver + Send + Sync {
    fn register_did(&self, doc: &DidDocument) -> Result<(), RegistryError>;
    fn accredit_issuer(&self, record: &IssuerRecord) -> Result<(), RegistryError>;
    /// DID resolutions that reached the registry (cache hits excluded).
    fn resolve_calls(&self) -> u64;
}

/// In-process registry. Also the backing store of [`RegistryService`].
#[derive(Debug, Default)]
pub struct RegistryStore {
    dids: RwLock<HashMap<String, DidDocument>>,
    issuers: RwLock<BTreeMap<String, IssuerRecord>>,
    down: AtomicBool,
    resolves: AtomicU64,
    tir_checks: AtomicU64,
}

impl RegistryStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Simulates an outage: every call fails with `Unavailable`.
    pub fn set_down(&self, down: bool) {
        self.down.store(down, Ordering::SeqCst);
    }

    pub fn tir_checks(&self) -> u64 {
        self.tir_checks.load(Ordering::SeqCst)
    }

    fn check_up(&self) -> Result<(), RegistryError> {
        if self.down.load(Ordering::SeqCst) {
            return Err(RegistryError::Unavailable("registry is down".into()));
        }
        Ok(())
    }

    pub fn resolve_did(&self, did: &str) -> Result<DidDocument, RegistryError> {
        self.check_up()?;
        self.resolves.fetch_add(1, Ordering::SeqCst);
        self.dids
            .read()
            .expect("registry lock poisoned")
            .get(did)
            .cloned()
            .ok_or(RegistryError::NotFound)
    }

    pub fn issuer(&self, did: &str) -> Result<Option<IssuerRecord>, RegistryError> {
        self.check_up()?;
        self.tir_checks.fetch_add(1, Ordering::SeqCst);
        Ok(self.issuers.read().expect("registry lock poisoned").get(did).cloned())
    }
}

impl Registry for RegistryStore {
    fn register_did(&self, doc: &DidDocument) -> Result<(), RegistryError> {
        self.check_up()?;
        doc.validate().map_err(|e| RegistryError::MalformedDocument(e.to_string()))?;
        self.dids
            .write()
            .expect("registry lock poisoned")
            .insert(doc.did.clone(), doc.clone());
        Ok(())
    }

    fn accredit_issuer(&self, record: &IssuerRecord) -> Result<(), RegistryError> {
        self.check_up()?;
        if !self.dids.read().expect("registry lock poisoned").contains_key(&record.did) {
            return Err(RegistryError::UnresolvableDid);
        }
        self.issuers
            .write()
            .expect("registry lock poisoned")
            .insert(record.did.clone(), record.clone());
        Ok(())
    }

    fn resolve_calls(&self) -> u64 {
        self.resolves.load(Ordering::SeqCst)
    }
}

fn to_resolve_error(e: RegistryError) -> ResolveError {
    match e {
        RegistryError::NotFound | RegistryError::UnresolvableDid => ResolveError::NotFound,
        RegistryError::MalformedDocument(m) | RegistryError::Unavailable(m) => ResolveError::Unavailable(m),
    }
}

impl DidResolver for RegistryStore {
    fn resolve(&self, did: &str) -> Result<DidDocument, ResolveError> {
        self.resolve_did(did).map_err(to_resolve_error)
    }

    fn is_accredited(&self, did: &str) -> Result<bool, ResolveError> {
        self.issuer(did).map(|r| r.is_some()).map_err(to_resolve_error)
    }
}

fn percent_decode(s: &str) -> Option<String> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = s.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

fn percent_encode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b"-._~:".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

type HttpResponse = tiny_http::Response<std::io::Cursor<Vec<u8>>>;

pub(crate) fn json_response(status: u16, body: &serde_json::Value) -> HttpResponse {
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
    tiny_http::Response::from_data(serde_json::to_vec(body).expect("serializable"))
        .with_status_code(status)
        .with_header(header)
}

fn error_response(status: u16, code: &str, detail: impl std::fmt::Display) -> HttpResponse {
    json_response(status, &json!({ "error": code, "detail": detail.to_string() }))
}

fn handle(store: &RegistryStore, req: &mut tiny_http::Request) -> HttpResponse {
    let url = req.url().split('?').next().unwrap_or("").to_string();
    let mut body = Vec::new();
    if req.as_reader().take(1 << 20).read_to_end(&mut body).is_err() {
        return error_response(400, "BadRequest", "unreadable body");
    }
    let segments: Vec<&str> = url.trim_matches('/').split('/').collect();
    let unavailable = |e: RegistryError| match e {
        RegistryError::Unavailable(m) => error_response(503, "Unavailable", m),
        other => error_response(500, "Internal", other),
    };
    match (req.method(), segments.as_slice()) {
        (tiny_http::Method::Get, ["did", id]) => {
            let Some(did) = percent_decode(id) else {
                return error_response(400, "BadRequest", "bad DID encoding");
            };
            match store.resolve_did(&did) {
                Ok(doc) => json_response(200, &json!(doc)),
                Err(RegistryError::NotFound) => error_response(404, "NotFound", did),
                Err(e) => unavailable(e),
            }
        }
        (tiny_http::Method::Put, ["did", id]) => {
            let Some(did) = percent_decode(id) else {
                return error_response(400, "BadRequest", "bad DID encoding");
            };
            let doc: DidDocument = match serde_json::from_slice(&body) {
                Ok(d) => d,
                Err(e) => return error_response(400, "MalformedDocument", e),
            };
            if doc.did != did {
                return error_response(400, "MalformedDocument", "DID in path and body differ");
            }
            match store.register_did(&doc) {
                Ok(()) => json_response(200, &json!(doc)),
                Err(RegistryError::MalformedDocument(m)) => error_response(400, "MalformedDocument", m),
                Err(e) => unavailable(e),
            }
        }
        (tiny_http::Method::Get, ["tir", id]) => {
            let Some(did) = percent_decode(id) else {
                return error_response(400, "BadRequest", "bad DID encoding");
            };
            match store.issuer(&did) {
                Ok(rec) => json_response(
                    200,
                    &json!({ "did": did, "trusted": rec.is_some(), "label": rec.map(|r| r.label) }),
                ),
                Err(e) => unavailable(e),
            }
        }
        (tiny_http::Method::Post, ["tir"]) => {
            let rec: IssuerRecord = match serde_json::from_slice(&body) {
                Ok(r) => r,
                Err(e) => return error_response(400, "BadRequest", e),
            };
            match store.accredit_issuer(&rec) {
                Ok(()) => json_response(200, &json!(rec)),
                Err(RegistryError::UnresolvableDid) => error_response(404, "UnresolvableDid", rec.did),
                Err(e) => unavailable(e),
            }
        }
        _ => error_response(404, "NoRoute", url),
    }
}

/// HTTP front end over a [`RegistryStore`], served on a background thread.
pub struct RegistryService {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    store: Arc<RegistryStore>,
    thread: Option<JoinHandle<()>>,
}

impl RegistryService {
    pub fn start(addr: SocketAddr, store: Arc<RegistryStore>) -> std::io::Result<Self> {
        let server = Arc::new(tiny_http::Server::http(addr).map_err(std::io::Error::other)?);
        let bound = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("registry must listen on an IP address"))?;
        let (srv, st) = (server.clone(), store.clone());
        let thread = std::thread::Builder::new().name("registry".into()).spawn(move || {
            for mut req in srv.incoming_requests() {
                let resp = handle(&st, &mut req);
                if let Err(e) = req.respond(resp) {
                    log::debug!("registry response failed: {e}");
                }
            }
        })?;
        Ok(Self {
            server,
            addr: bound,
            store,
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn store(&self) -> &Arc<RegistryStore> {
        &self.store
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for RegistryService {
    fn drop(&mut self) {
        self.stop();
    }
}

/// HTTP client of a [`RegistryService`] with an optional resolution cache.
pub struct RegistryClient {
    base: String,
    agent: ureq::Agent,
    ttl: Duration,
    cache: Mutex<HashMap<String, (DidDocument, Instant)>>,
    http_resolves: AtomicU64,
    http_calls: AtomicU64,
}

impl std::fmt::Debug for RegistryClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegistryClient")
            .field("base", &self.base)
            .field("ttl", &self.ttl)
            .finish()
    }
}

impl RegistryClient {
    /// `cache_ttl` of zero disables caching.
    pub fn new(base_url: &str, cache_ttl: Duration) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(2))
            .timeout(Duration::from_secs(5))
            .build();
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            agent,
            ttl: cache_ttl,
            cache: Mutex::new(HashMap::new()),
            http_resolves: AtomicU64::new(0),
            http_calls: AtomicU64::new(0),
        }
    }

    /// Every HTTP request issued, of any kind.
    pub fn http_calls(&self) -> u64 {
        self.http_calls.load(Ordering::SeqCst)
    }

    pub fn clear_cache(&self) {
        self.cache.lock().expect("cache lock poisoned").clear();
    }

    fn call(&self, req: ureq::Request, body: Option<serde_json::Value>) -> Result<serde_json::Value, (u16, String)> {
        self.http_calls.fetch_add(1, Ordering::SeqCst);
        let resp = match body {
            Some(b) => req.send_json(b),
            None => req.call(),
        };
        match resp {
            Ok(r) => r.into_json().map_err(|e| (0, e.to_string())),
            Err(ureq::Error::Status(code, r)) => {
                let v: serde_json::Value = r.into_json().unwrap_or_default();
                Err((code, v["error"].as_str().unwrap_or("").to_string()))
            }
            Err(e) => Err((0, e.to_string())),
        }
    }

    fn classify(&self, (code, msg): (u16, String)) -> RegistryError {
        match (code, msg.as_str()) {
            (404, "NotFound") => RegistryError::NotFound,
            (404, "UnresolvableDid") => RegistryError::UnresolvableDid,
            (400, _) => RegistryError::MalformedDocument(msg),
            _ => RegistryError::Unavailable(if code == 0 { msg } else { format!("HTTP {code} {msg}") }),
        }
    }

    pub fn resolve_did(&self, did: &str) -> Result<DidDocument, RegistryError> {
        if !self.ttl.is_zero() {
            let cache = self.cache.lock().expect("cache lock poisoned");
            if let Some((doc, at)) = cache.get(did) {
                if at.elapsed() < self.ttl {
                    return Ok(doc.clone());
                }
            }
        }
        self.http_resolves.fetch_add(1, Ordering::SeqCst);
        let url = format!("{}/did/{}", self.base, percent_encode(did));
        let v = self.call(self.agent.get(&url), None).map_err(|e| self.classify(e))?;
        let doc: DidDocument =
            serde_json::from_value(v).map_err(|e| RegistryError::Unavailable(format!("bad registry reply: {e}")))?;
        if !self.ttl.is_zero() {
            self.cache
                .lock()
                .expect("cache lock poisoned")
                .insert(did.to_string(), (doc.clone(), Instant::now()));
        }
        Ok(doc)
    }

    pub fn is_trusted_issuer(&self, did: &str) -> Result<bool, RegistryError> {
        let url = format!("{}/tir/{}", self.base, percent_encode(did));
        let v = self.call(self.agent.get(&url), None).map_err(|e| self.classify(e))?;
        Ok(v["trusted"].as_bool().unwrap_or(false))
    }
}

impl Registry for RegistryClient {
    fn register_did(&self, doc: &DidDocument) -> Result<(), RegistryError> {
        let url = format!("{}/did/{}", self.base, percent_encode(&doc.did));
        self.call(self.agent.put(&url), Some(json!(doc)))
            .map(|_| ())
            .map_err(|e| self.classify(e))?;
        self.cache.lock().expect("cache lock poisoned").remove(&doc.did);
        Ok(())
    }

    fn accredit_issuer(&self, record: &IssuerRecord) -> Result<(), RegistryError> {
        let url = format!("{}/tir", self.base);
        self.call(self.agent.post(&url), Some(json!(record)))
            .map(|_| ())
            .map_err(|e| self.classify(e))
    }

    fn resolve_calls(&self) -> u64 {
        self.http_resolves.load(Ordering::SeqCst)
    }
}

impl DidResolver for RegistryClient {
    fn resolve(&self, did: &str) -> Result<DidDocument, ResolveError> {
        self.resolve_did(did).map_err(to_resolve_error)
    }

    fn is_accredited(&self, did: &str) -> Result<bool, ResolveError> {
        self.is_trusted_issuer(did).map_err(to_resolve_error)
    }
}
