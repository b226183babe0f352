//! Loopback HTTP/JSON admin API used by the CLI and the web UI.
//!
//! Every route lives under `/api`. Other paths serve static files from the
//! configured web UI directory, if any.

use std::collections::{BTreeMap, HashMap};
use std::io::{Cursor, Read};
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::Deserialize;
use serde_json::{json, Value as Json};

use datavault_core::accesslog::AuditVerdict;
use datavault_core::credential::{Attestation, VerifiableCredential};
use datavault_core::policy::{
    format_expr, node_from_json, parse_expr, policy_from_json, policy_to_json, AccessMode, Policy, PolicyNode,
    PolicySlot,
};
use datavault_core::wire::FailureReason;
use datavault_core::{Value, VaultPath};

use crate::client::{ClientError, TokenChoice};
use crate::node::{Node, NodeError};
use crate::vault::VaultError;

/// Largest request body: a file at the size cap plus slack.
const MAX_BODY: u64 = datavault_core::MAX_FILE_SIZE as u64 + 1;

type Response = tiny_http::Response<Cursor<Vec<u8>>>;

#[derive(Debug)]
pub struct ApiError {
    pub status: u16,
    pub code: &'static str,
    pub detail: String,
}

impl ApiError {
    fn new(status: u16, code: &'static str, detail: impl std::fmt::Display) -> Self {
        Self {
            status,
            code,
            detail: detail.to_string(),
        }
    }

    fn bad_request(detail: impl std::fmt::Display) -> Self {
        Self::new(400, "BadRequest", detail)
    }

    fn malformed_policy(detail: impl std::fmt::Display) -> Self {
        Self::new(400, "MalformedPolicy", detail)
    }
}

impl From<VaultError> for ApiError {
    fn from(e: VaultError) -> Self {
        match &e {
            VaultError::Locked => Self::new(401, "Locked", e),
            VaultError::UnknownPath(_) => Self::new(404, "UnknownPath", e),
            VaultError::WrongPassword => Self::new(403, "WrongPassword", e),
            VaultError::AlreadyUnlocked => Self::new(409, "AlreadyUnlocked", e),
            VaultError::FileTooLarge => Self::new(413, "FileTooLarge", e),
            VaultError::InvalidPath(_) | VaultError::Index(_) => Self::new(400, "InvalidPath", e),
            _ => Self::new(500, "Internal", e),
        }
    }
}

impl From<NodeError> for ApiError {
    fn from(e: NodeError) -> Self {
        match e {
            NodeError::Vault(v) => v.into(),
            NodeError::UnknownPeer(_) | NodeError::AmbiguousPeer(_) => Self::new(404, "UnknownPeer", e),
            NodeError::UnknownSubject => Self::new(400, "UnknownSubject", e),
            NodeError::Client(c) => c.into(),
            NodeError::Credential(_) => Self::new(400, "CredentialError", e),
            _ => Self::new(500, "Internal", e),
        }
    }
}

impl From<ClientError> for ApiError {
    fn from(e: ClientError) -> Self {
        match &e {
            ClientError::Locked => Self::new(401, "Locked", e),
            ClientError::Failed { reason, .. } => match reason {
                FailureReason::AccessDenied => Self::new(403, "AccessDenied", e),
                FailureReason::UnknownPath => Self::new(404, "UnknownPath", e),
                FailureReason::FileTooLarge => Self::new(413, "FileTooLarge", e),
                FailureReason::ExpiredToken | FailureReason::Malformed => Self::new(502, "PeerUnreachable", e),
            },
            _ => Self::new(502, "PeerUnreachable", e),
        }
    }
}

type ApiResult = Result<Response, ApiError>;

fn json_ok(body: Json) -> ApiResult {
    Ok(json_response(200, &body))
}

fn json_response(status: u16, body: &Json) -> Response {
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
    tiny_http::Response::from_data(serde_json::to_vec(body).expect("serializable"))
        .with_status_code(status)
        .with_header(header)
}

fn error_response(e: &ApiError) -> Response {
    json_response(e.status, &json!({ "error": e.code, "detail": e.detail }))
}

fn bytes_response(bytes: Vec<u8>, content_type: &str) -> Response {
    let header = tiny_http::Header::from_bytes("Content-Type", content_type).expect("valid header");
    tiny_http::Response::from_data(bytes).with_header(header)
}

struct Request {
    method: tiny_http::Method,
    segments: Vec<String>,
    query: HashMap<String, String>,
    body: Vec<u8>,
}

impl Request {
    fn param(&self, name: &str) -> Result<&str, ApiError> {
        self.query
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| ApiError::bad_request(format!("missing query parameter {name:?}")))
    }

    fn path(&self) -> Result<VaultPath, ApiError> {
        let raw = self.query.get("path").map(String::as_str).unwrap_or("");
        VaultPath::parse(raw).map_err(|e| ApiError::new(400, "InvalidPath", e))
    }

    fn json<T: for<'de> Deserialize<'de>>(&self) -> Result<T, ApiError> {
        serde_json::from_slice(&self.body).map_err(ApiError::bad_request)
    }
}

fn require_unlocked(node: &Node) -> Result<(), ApiError> {
    if node.is_unlocked() {
        Ok(())
    } else {
        Err(ApiError::new(401, "Locked", "vault is locked"))
    }
}

fn policy_view(path: &VaultPath, policy: &Policy, version: u64) -> Json {
    let expr = |n: &Option<PolicyNode>| n.as_ref().map(format_expr);
    json!({
        "path": path,
        "version": version,
        "policy": policy_to_json(policy),
        "expressions": {
            "read": expr(&policy.read),
            "write": expr(&policy.write),
            "combined": expr(&policy.combined),
        },
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyUpdate {
    /// Whole policy document; replaces every slot.
    #[serde(default)]
    policy: Option<Json>,
    /// `read`, `write` or `combined` (the default) for the fields below.
    #[serde(default)]
    slot: Option<String>,
    #[serde(default)]
    expression: Option<String>,
    #[serde(default)]
    node: Option<Json>,
    /// Removes the policy in `slot`.
    #[serde(default)]
    clear: bool,
}

fn parse_slot(s: Option<&str>) -> Result<PolicySlot, ApiError> {
    match s.unwrap_or("combined") {
        "combined" => Ok(PolicySlot::Combined),
        "read" => Ok(PolicySlot::Read),
        "write" => Ok(PolicySlot::Write),
        other => Err(ApiError::malformed_policy(format!("unknown slot {other:?}"))),
    }
}

fn set_policy(node: &Node, req: &Request) -> ApiResult {
    require_unlocked(node)?;
    let path = req.path()?;
    let update: PolicyUpdate = serde_json::from_slice(&req.body).map_err(ApiError::malformed_policy)?;
    let vault = node.vault();
    let version = if let Some(doc) = update.policy {
        let policy = policy_from_json(&doc).map_err(ApiError::malformed_policy)?;
        vault.replace_policy(&path, policy)?
    } else {
        let slot = parse_slot(update.slot.as_deref())?;
        let parsed = match (update.expression, update.node, update.clear) {
            (Some(e), None, false) => Some(parse_expr(&e).map_err(ApiError::malformed_policy)?),
            (None, Some(n), false) => Some(node_from_json(&n, "$").map_err(ApiError::malformed_policy)?),
            (None, None, true) => None,
            _ => {
                return Err(ApiError::malformed_policy(
                    "give exactly one of policy, expression, node or clear",
                ))
            }
        };
        vault.set_policy(&path, slot, parsed)?
    };
    let acl = vault.get_policy(&path)?;
    debug_assert_eq!(acl.version, version);
    json_ok(policy_view(&path, &acl.policy, acl.version))
}

fn token_choice(q: Option<&str>) -> Result<TokenChoice, ApiError> {
    Ok(match q.unwrap_or("credentials") {
        "credentials" => TokenChoice::Credentials,
        "attestations" => TokenChoice::Attestations,
        "presentation" => TokenChoice::Presentation,
        "session" => TokenChoice::Session,
        "none" => TokenChoice::Empty,
        other => return Err(ApiError::bad_request(format!("unknown token choice {other:?}"))),
    })
}

fn audit(node: &Node, req: &Request) -> ApiResult {
    let block = req.param("block")?;
    let path = req.path()?;
    let chain = node.ctx().chains();
    let found = match block.parse::<usize>() {
        Ok(i) => chain.blocks().get(i),
        Err(_) => {
            let mut hash = [0u8; 32];
            hex::decode_to_slice(block, &mut hash).map_err(|_| ApiError::bad_request("block is neither an index nor a hash"))?;
            chain.find(&hash)
        }
    };
    let b = found.ok_or_else(|| ApiError::new(404, "UnknownBlock", block))?;
    let verdict: AuditVerdict = b.audit(&path);
    json_ok(json!({ "block": hex::encode(b.hash()), "path": path, "verdict": verdict }))
}

fn log_list(node: &Node) -> Json {
    let chain = node.ctx().chains();
    let me = node.public_key();
    let blocks: Vec<Json> = chain
        .blocks()
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let role = match b.role_of(&me) {
                Some(datavault_core::accesslog::Role::Host) => "host",
                _ => "requester",
            };
            json!({
                "position": i,
                "hash": hex::encode(b.hash()),
                "role": role,
                "host": hex::encode(b.host),
                "requester": hex::encode(b.requester),
                "timestamp": b.timestamp,
                "granted": b.bloom.n,
                "countersigned": b.is_countersigned(),
            })
        })
        .collect();
    json!({ "owner": hex::encode(me.as_bytes()), "blocks": blocks, "export": chain.export() })
}

fn metrics(node: &Node) -> Json {
    let snap = node.metrics().snapshot();
    let st = node.endpoint().stats();
    let load = |a: &std::sync::atomic::AtomicU64| a.load(std::sync::atomic::Ordering::Relaxed);
    json!({
        "totals": snap.totals,
        "last_request": snap.last_request,
        "recent": snap.recent,
        "transport": {
            "datagrams_sent": load(&st.datagrams_sent),
            "datagrams_received": load(&st.datagrams_received),
            "bytes_sent": load(&st.bytes_sent),
            "bytes_received": load(&st.bytes_received),
            "retransmissions": load(&st.retransmissions),
            "rejected_datagrams": load(&st.rejected_datagrams),
        },
        "registry_resolve_calls": node.ctx().registry.resolve_calls(),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SicRequest {
    peer: String,
    #[serde(default)]
    subject: Option<String>,
    claims: serde_json::Map<String, Json>,
}

fn issue_sic(node: &Node, req: &Request) -> ApiResult {
    require_unlocked(node)?;
    let body: SicRequest = req.json()?;
    let peer = node.resolve_peer(&body.peer)?;
    let claims = body
        .claims
        .iter()
        .map(|(k, v)| Value::from_json(v).map(|v| (k.clone(), v)))
        .collect::<Result<BTreeMap<_, _>, _>>()
        .map_err(ApiError::bad_request)?;
    let vc = node.issue_sic(&peer, body.subject, claims)?;
    json_ok(json!(vc))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AccessCheck {
    path: String,
    #[serde(default)]
    write: bool,
    #[serde(default)]
    credentials: Vec<VerifiableCredential>,
    #[serde(default)]
    attestations: Vec<Attestation>,
    /// Fingerprint the tokens are bound to.
    holder: String,
}

/// Runs the same verification and access check a remote request gets.
fn access_check(node: &Node, req: &Request) -> ApiResult {
    require_unlocked(node)?;
    let body: AccessCheck = req.json()?;
    let path = VaultPath::parse(&body.path).map_err(|e| ApiError::new(400, "InvalidPath", e))?;
    let holder = datavault_core::Fingerprint::from_hex(&body.holder).ok_or_else(|| ApiError::bad_request("bad holder fingerprint"))?;
    let ctx = node.ctx();
    let guard = ctx.wallet();
    let w = guard.as_ref().ok_or_else(|| ApiError::new(401, "Locked", "vault is locked"))?;
    let me = w.identity.self_identity();
    let mut counts = datavault_core::VerifyCounts::default();
    let mut bags = Vec::new();
    for a in &body.attestations {
        if let Ok(b) = datavault_core::credential::verify_attestation(a, &holder, &w.trusted, &me, &mut counts) {
            bags.push(b);
        }
    }
    let mut docs = BTreeMap::new();
    for vc in &body.credentials {
        if let Ok(b) = datavault_core::credential::verify_credential(vc, &*ctx.registry, &w.trusted, &me, &mut docs, &mut counts) {
            bags.push(b);
        }
    }
    let mode = if body.write { AccessMode::Write } else { AccessMode::Read };
    let decision = ctx.vault.check_access(&path, mode, &bags, &me.eval_context())?;
    json_ok(json!({
        "path": path,
        "granted": decision.granted,
        "satisfying_credentials": decision.satisfying_credential_ids,
        "verified_credentials": bags.len(),
    }))
}

fn route(node: &Arc<Node>, req: &Request) -> ApiResult {
    use tiny_http::Method::{Delete, Get, Post, Put};
    let seg: Vec<&str> = req.segments.iter().map(String::as_str).collect();
    match (&req.method, seg.as_slice()) {
        (Get, ["status"]) => {
            let summary = node.wallet_summary().ok();
            json_ok(json!({
                "fingerprint": node.fingerprint(),
                "transport_key": hex::encode(node.public_key().as_bytes()),
                "did": summary.as_ref().map(|s| s.did.clone()),
                "did_registered": summary.as_ref().map(|s| s.did_registered),
                "listen": node.local_addr(),
                "unlocked": node.is_unlocked(),
            }))
        }
        (Get, ["peers"]) => json_ok(json!(node.peers())),
        (Get, ["tree"]) => {
            require_unlocked(node)?;
            json_ok(json!({ "tree": node.vault().tree()? }))
        }
        (Get, ["list"]) => {
            require_unlocked(node)?;
            json_ok(json!(node.vault().list(&req.path()?)?))
        }
        (Get, ["peers", peer, "tree"]) => {
            require_unlocked(node)?;
            let peer = node.resolve_peer(peer)?;
            let choice = token_choice(req.query.get("tokens").map(String::as_str))?;
            let session = node.client().accessible_files(&peer, &choice)?;
            json_ok(json!({
                "peer": hex::encode(peer.key.as_bytes()),
                "tree": session.claims.sub_tree,
                "expires": session.claims.exp,
                "token_bytes": session.token.len(),
            }))
        }
        (Get, ["peers", peer, "file"]) => {
            require_unlocked(node)?;
            let peer = node.resolve_peer(peer)?;
            let bytes = node.client().fetch(&peer, &req.path()?)?;
            Ok(bytes_response(bytes.to_vec(), "application/octet-stream"))
        }
        (Get, ["files"]) => {
            require_unlocked(node)?;
            Ok(bytes_response(node.vault().get(&req.path()?)?, "application/octet-stream"))
        }
        (Put, ["files"]) => {
            require_unlocked(node)?;
            let path = req.path()?;
            node.vault().put(&path, &req.body)?;
            json_ok(json!({ "path": path, "size": req.body.len() }))
        }
        (Post, ["folders"]) => {
            require_unlocked(node)?;
            let path = req.path()?;
            node.vault().mkdir(&path)?;
            json_ok(json!({ "path": path }))
        }
        (Delete, ["files"]) => {
            require_unlocked(node)?;
            json_ok(json!({ "deleted": node.vault().delete(&req.path()?)? }))
        }
        (Get, ["policy"]) => {
            require_unlocked(node)?;
            let path = req.path()?;
            let acl = node.vault().get_policy(&path)?;
            json_ok(policy_view(&path, &acl.policy, acl.version))
        }
        (Put, ["policy"]) => set_policy(node, req),
        (Post, ["access"]) => access_check(node, req),
        (Post, ["sic"]) => issue_sic(node, req),
        (Get, ["wallet"]) => json_ok(json!(node.wallet_summary()?)),
        (Post, ["wallet", "credentials"]) => {
            let vc: VerifiableCredential = req.json()?;
            let added = node.ctx().update_wallet(|w| w.add_credential(vc))?;
            json_ok(json!({ "added": added }))
        }
        (Post, ["wallet", "attestations"]) => {
            let att: Attestation = req.json()?;
            let added = node.ctx().update_wallet(|w| w.add_attestation(att))?;
            json_ok(json!({ "added": added }))
        }
        (Get, ["trust"]) => json_ok(json!(node.wallet_summary()?.trusted)),
        (Post, ["trust"]) => {
            #[derive(Deserialize)]
            struct Body {
                issuer: String,
            }
            let b: Body = req.json()?;
            json_ok(json!({ "issuer": b.issuer, "changed": node.trust(&b.issuer)? }))
        }
        (Delete, ["trust"]) => {
            let issuer = req.param("issuer")?;
            json_ok(json!({ "issuer": issuer, "changed": node.distrust(issuer)? }))
        }
        (Get, ["log"]) => json_ok(log_list(node)),
        (Get, ["log", "verify"]) => {
            let result = node.ctx().chains().verify();
            Ok(match result {
                Ok(report) => json_response(200, &json!({ "ok": true, "report": report })),
                Err(broken) => json_response(
                    409,
                    &json!({ "ok": false, "position": broken.position, "reason": broken.reason.to_string() }),
                ),
            })
        }
        (Get, ["log", "audit"]) => audit(node, req),
        (Post, ["lock"]) => {
            node.lock()?;
            json_ok(json!({ "unlocked": false }))
        }
        (Post, ["unlock"]) => {
            #[derive(Deserialize)]
            struct Body {
                password: String,
            }
            let b: Body = req.json()?;
            let report = node.unlock(&b.password)?;
            json_ok(json!({ "unlocked": true, "report": report }))
        }
        (Get, ["metrics"]) => json_ok(metrics(node)),
        (Post, ["shutdown"]) => {
            let n = node.clone();
            std::thread::spawn(move || n.shutdown());
            json_ok(json!({ "stopping": true }))
        }
        _ => Err(ApiError::new(404, "NoRoute", format!("{} /api/{}", req.method, seg.join("/")))),
    }
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

fn static_file(root: &Path, url_path: &str) -> Response {
    let rel = url_path.trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    if rel.split('/').any(|c| c == ".." || c.is_empty()) {
        return error_response(&ApiError::bad_request("bad path"));
    }
    let full = root.join(rel);
    match std::fs::read(&full) {
        Ok(bytes) => bytes_response(bytes, content_type(&full)),
        Err(_) => match std::fs::read(root.join("index.html")) {
            Ok(bytes) => bytes_response(bytes, "text/html; charset=utf-8"),
            Err(_) => error_response(&ApiError::new(404, "NotFound", url_path)),
        },
    }
}

fn handle(node: &Arc<Node>, webui: Option<&Path>, req: &mut tiny_http::Request) -> Response {
    let url = req.url().to_string();
    let (path, query) = url.split_once('?').unwrap_or((&url, ""));
    let Some(api) = path.strip_prefix("/api/") else {
        return match webui {
            Some(root) if *req.method() == tiny_http::Method::Get => static_file(root, path),
            _ => error_response(&ApiError::new(404, "NoRoute", path)),
        };
    };
    let mut body = Vec::new();
    if req.as_reader().take(MAX_BODY).read_to_end(&mut body).is_err() {
        return error_response(&ApiError::bad_request("unreadable body"));
    }
    let segments = api
        .trim_end_matches('/')
        .split('/')
        .map(|s| form_urlencoded::parse(format!("x={s}").as_bytes()).next().map(|(_, v)| v.into_owned()).unwrap_or_default())
        .collect();
    let request = Request {
        method: req.method().clone(),
        segments,
        query: form_urlencoded::parse(query.as_bytes()).into_owned().collect(),
        body,
    };
    match route(node, &request) {
        Ok(r) => r,
        Err(e) => {
            log::debug!("admin {} {path}: {} {}", request.method, e.status, e.code);
            error_response(&e)
        }
    }
}

/// The admin HTTP server, bound to 127.0.0.1.
pub struct AdminServer {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    thread: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for AdminServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdminServer").field("addr", &self.addr).finish()
    }
}

impl AdminServer {
    pub fn start(node: Arc<Node>, port: u16, webui: Option<PathBuf>) -> std::io::Result<Self> {
        let server = tiny_http::Server::http(SocketAddr::from((Ipv4Addr::LOCALHOST, port))).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::AddrInUse, format!("admin port {port}: {e}"))
        })?;
        let server = Arc::new(server);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("admin API must listen on an IP address"))?;
        let srv = server.clone();
        let thread = std::thread::Builder::new().name("admin".into()).spawn(move || {
            for mut req in srv.incoming_requests() {
                let node = node.clone();
                let webui = webui.clone();
                std::thread::spawn(move || {
                    let resp = handle(&node, webui.as_deref(), &mut req);
                    if let Err(e) = req.respond(resp) {
                        log::debug!("admin response failed: {e}");
                    }
                });
            }
        })?;
        Ok(Self {
            server,
            addr,
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for AdminServer {
    fn drop(&mut self) {
        self.stop();
    }
}
