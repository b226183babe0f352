mod common;

use std::cell::RefCell;
use std::sync::Arc;
use std::time::Duration;

use common::*;
use datavault::admin::AdminServer;
use datavault::node::Node;
use datavault_core::keys::key_hex;
use datavault_core::Value;
use ed25519_dalek::SigningKey;
use rand::rngs::OsRng;
use serde_json::{json, Value as Json};

struct Api {
    base: String,
    agent: ureq::Agent,
    seen: RefCell<Vec<String>>,
}

impl Api {
    fn new(server: &AdminServer) -> Self {
        Self {
            base: server.url(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(60)).build(),
            seen: RefCell::new(Vec::new()),
        }
    }

    fn raw(&self, method: &str, path: &str, body: Option<&[u8]>) -> (u16, Vec<u8>) {
        let req = self.agent.request(method, &format!("{}/api/{path}", self.base));
        let res = match body {
            Some(b) => req.send_bytes(b),
            None => req.call(),
        };
        let res = match res {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(e) => panic!("{method} {path}: {e}"),
        };
        let status = res.status();
        let mut bytes = Vec::new();
        std::io::Read::read_to_end(&mut res.into_reader(), &mut bytes).unwrap();
        self.seen.borrow_mut().push(String::from_utf8_lossy(&bytes).into_owned());
        (status, bytes)
    }

    fn call(&self, method: &str, path: &str, body: Option<Json>) -> (u16, Json) {
        let text = body.map(|b| b.to_string());
        let (status, bytes) = self.raw(method, path, text.as_deref().map(str::as_bytes));
        (status, serde_json::from_slice(&bytes).unwrap_or(Json::Null))
    }

    fn ok(&self, method: &str, path: &str, body: Option<Json>) -> Json {
        let (status, json) = self.call(method, path, body);
        assert_eq!(status, 200, "{method} {path}: {json}");
        json
    }

    fn put_file(&self, path: &str, bytes: &[u8]) {
        let (status, _) = self.raw("PUT", &format!("files?path={path}"), Some(bytes));
        assert_eq!(status, 200, "{path}");
    }
}

fn peer_spec(node: &Node) -> String {
    format!("{}@{}", key_hex(&node.public_key()), node.local_addr())
}

fn tree_files(tree: &Json) -> Vec<String> {
    fn walk(prefix: &str, v: &Json, out: &mut Vec<String>) {
        if let Some(map) = v.as_object() {
            for (k, child) in map {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}/{k}") };
                if child.is_object() {
                    walk(&p, child, out);
                } else {
                    out.push(p);
                }
            }
        }
    }
    let mut out = Vec::new();
    walk("", tree, &mut out);
    out.sort();
    out
}

struct Pair {
    _net: Net,
    host: Arc<Node>,
    req: Arc<Node>,
    host_api: Api,
    req_api: Api,
    _servers: (AdminServer, AdminServer),
}

fn pair() -> Pair {
    let mut net = Net::new();
    net.transfer = fast_transfer();
    let host = net.spawn();
    let req = net.spawn();
    let hs = AdminServer::start(host.clone(), 0, None).unwrap();
    let rs = AdminServer::start(req.clone(), 0, None).unwrap();
    Pair {
        host_api: Api::new(&hs),
        req_api: Api::new(&rs),
        _net: net,
        host,
        req,
        _servers: (hs, rs),
    }
}

#[test]
fn example_policy_through_the_api() {
    let p = pair();
    let h = &p.host_api;
    h.put_file("pub/readme.txt", b"hello");
    h.put_file("study/grades.csv", b"a,b");
    h.put_file("study/thesis.pdf", b"pdf");
    let policy = h.ok(
        "PUT",
        "policy?path=study",
        Some(json!({ "expression": "(age gte 18) and ((university eq \"TU Delft\") or (issuer eq me))" })),
    );
    assert_eq!(policy["version"], 1);
    let shown = h.ok("GET", "policy?path=study", None);
    assert_eq!(
        shown["expressions"]["combined"],
        "(age gte 18) and ((university eq \"TU Delft\") or (issuer eq me))"
    );
    assert_eq!(shown["policy"]["combined"]["type"], "branch");
    assert_eq!(shown["policy"]["combined"]["op"], "and");

    let attestor = SigningKey::generate(&mut OsRng);
    let attestor_hex = key_hex(&attestor.verifying_key());
    assert_eq!(h.ok("POST", "trust", Some(json!({ "issuer": attestor_hex })))["changed"], true);
    give_attestations(&p.req, &attestor, &[("age", Value::Int(30))]);

    let spec = peer_spec(&p.host);
    let view = p.req_api.ok("GET", &format!("peers/{spec}/tree?tokens=attestations"), None);
    assert_eq!(tree_files(&view["tree"]), vec!["pub/readme.txt"]);
    assert!(view["token_bytes"].as_u64().unwrap() > 0);
    let metrics = h.ok("GET", "metrics", None);
    assert_eq!(metrics["last_request"]["signatures"], 1);

    give_attestations(&p.req, &attestor, &[("university", "TU Delft".into()), ("country", "NL".into())]);
    let view = p.req_api.ok("GET", &format!("peers/{spec}/tree?tokens=attestations"), None);
    assert_eq!(
        tree_files(&view["tree"]),
        vec!["pub/readme.txt", "study/grades.csv", "study/thesis.pdf"]
    );
    let metrics = h.ok("GET", "metrics", None);
    assert_eq!(metrics["last_request"]["signatures"], 3);
    assert_eq!(metrics["last_request"]["registry_lookups"], 0);

    let (status, bytes) = p.req_api.raw("GET", &format!("peers/{spec}/file?path=study/thesis.pdf"), None);
    assert_eq!((status, bytes.as_slice()), (200, b"pdf".as_slice()));

    let holder = p.req.fingerprint();
    let atts = p.req.wallet_summary().unwrap().attestations;
    let check = h.ok(
        "POST",
        "access",
        Some(json!({ "path": "study/grades.csv", "holder": holder, "attestations": atts })),
    );
    assert_eq!(check["granted"], true);
    let check = h.ok(
        "POST",
        "access",
        Some(json!({ "path": "study/grades.csv", "holder": holder, "attestations": [atts[0]] })),
    );
    assert_eq!(check["granted"], false);
}

#[test]
fn errors_map_to_status_codes() {
    let p = pair();
    let h = &p.host_api;
    h.put_file("a/b.txt", b"b");
    let (s, e) = h.call("PUT", "policy?path=a", Some(json!({ "expression": "(age gte" })));
    assert_eq!((s, e["error"].as_str()), (400, Some("MalformedPolicy")));
    let (s, e) = h.call("PUT", "policy?path=a", Some(json!({ "policy": { "read": { "type": "leaf", "attr": "age" } } })));
    assert_eq!((s, e["error"].as_str()), (400, Some("MalformedPolicy")));
    let (s, e) = h.call("GET", "files?path=nope.txt", None);
    assert_eq!((s, e["error"].as_str()), (404, Some("UnknownPath")));
    let (s, e) = h.call("GET", "files?path=../etc", None);
    assert_eq!((s, e["error"].as_str()), (400, Some("InvalidPath")));
    let (s, e) = h.call("GET", "nothing/here", None);
    assert_eq!((s, e["error"].as_str()), (404, Some("NoRoute")));
    let (s, e) = h.call("GET", "peers/ffff/tree", None);
    assert_eq!((s, e["error"].as_str()), (404, Some("UnknownPeer")));
    let ghost = SigningKey::generate(&mut OsRng);
    let (s, e) = h.call("GET", &format!("peers/{}@127.0.0.1:9/tree", key_hex(&ghost.verifying_key())), None);
    assert_eq!((s, e["error"].as_str()), (502, Some("PeerUnreachable")));
    let (s, e) = h.call("POST", "unlock", Some(json!({ "password": PASSWORD })));
    assert_eq!((s, e["error"].as_str()), (409, Some("AlreadyUnlocked")));
    let (s, e) = h.call("POST", "sic", Some(json!({ "peer": peer_spec(&p.req), "claims": {} })));
    assert_eq!((s, e["error"].as_str()), (400, Some("UnknownSubject")));
}

#[test]
fn lock_and_unlock_over_http() {
    let p = pair();
    let h = &p.host_api;
    h.put_file("f.txt", b"data");
    assert_eq!(h.ok("POST", "lock", None)["unlocked"], false);
    for path in ["tree", "files?path=f.txt", "policy?path=f.txt", "list?path="] {
        let (s, e) = h.call("GET", path, None);
        assert_eq!((s, e["error"].as_str()), (401, Some("Locked")), "{path}");
    }
    let status = h.ok("GET", "status", None);
    assert_eq!(status["unlocked"], false);
    let (s, e) = h.call("POST", "unlock", Some(json!({ "password": "wrong" })));
    assert_eq!((s, e["error"].as_str()), (403, Some("WrongPassword")));
    let (s, _) = p.req_api.call("GET", &format!("peers/{}/tree", peer_spec(&p.host)), None);
    assert_eq!(s, 403);
    h.ok("POST", "unlock", Some(json!({ "password": PASSWORD })));
    let (s, body) = h.raw("GET", "files?path=f.txt", None);
    assert_eq!((s, body.as_slice()), (200, b"data".as_slice()));
}

#[test]
fn local_file_management_and_log_views() {
    let p = pair();
    let h = &p.host_api;
    h.ok("POST", "folders?path=docs/empty", None);
    h.put_file("docs/one.txt", b"1");
    let list = h.ok("GET", "list?path=docs", None);
    assert_eq!(list.as_array().unwrap().len(), 2);
    let spec = peer_spec(&p.host);
    let (s, _) = p.req_api.raw("GET", &format!("peers/{spec}/file?path=docs/one.txt"), None);
    assert_eq!(s, 200);
    assert!(wait_until(Duration::from_secs(5), || p.host.ctx().chains().countersigned_count() == 1));
    let log = h.ok("GET", "log", None);
    assert_eq!(log["blocks"].as_array().unwrap().len(), 1);
    assert_eq!(h.ok("GET", "log/verify", None)["ok"], true);
    let audit = h.ok("GET", "log/audit?block=0&path=docs/one.txt", None);
    assert_eq!(audit["verdict"]["present"], true);
    let (s, e) = h.call("GET", "log/audit?block=7&path=docs/one.txt", None);
    assert_eq!((s, e["error"].as_str()), (404, Some("UnknownBlock")));
    let deleted = h.ok("DELETE", "files?path=docs", None);
    assert_eq!(deleted["deleted"].as_array().unwrap().len(), 3);
    assert!(tree_files(&h.ok("GET", "tree", None)["tree"]).is_empty());
}

#[test]
fn sic_issued_over_http_lands_in_peer_wallet() {
    let mut net = Net::new();
    let host = net.spawn();
    let mut cfg = net.config();
    cfg.bootstrap = vec![host.local_addr()];
    let req = net.spawn_with(cfg);
    assert!(wait_until(Duration::from_secs(5), || host.peers().iter().any(|p| p.did.is_some())));
    let server = AdminServer::start(host.clone(), 0, None).unwrap();
    let api = Api::new(&server);
    let peers = api.ok("GET", "peers", None);
    assert_eq!(peers.as_array().unwrap().len(), 1);
    let fp = req.fingerprint();
    let vc = api.ok("POST", "sic", Some(json!({ "peer": &fp[..12], "claims": { "member": "gold", "since": { "date": "2020-05-01" } } })));
    assert_eq!(vc["credentialSubject"]["id"], did_of(&req));
    assert!(wait_until(Duration::from_secs(5), || req.wallet_summary().unwrap().credentials.len() == 1));
    assert_eq!(
        req.wallet_summary().unwrap().credentials[0].subject.claims["since"],
        Value::Date(datavault_core::value::Date::new(2020, 5, 1).unwrap())
    );
}

#[test]
fn responses_never_carry_secrets() {
    let p = pair();
    let h = &p.host_api;
    h.put_file("x/y.txt", b"y");
    for path in ["status", "wallet", "peers", "metrics", "log", "trust", "tree", "policy?path=x"] {
        h.call("GET", path, None);
    }
    p.req_api.call("GET", &format!("peers/{}/tree", peer_spec(&p.host)), None);
    p.req_api.call("GET", "wallet", None);
    let mut secrets = vec![PASSWORD.to_string()];
    for node in [&p.host, &p.req] {
        let guard = node.ctx().wallet();
        let id = &guard.as_ref().unwrap().identity;
        secrets.push(hex::encode(id.transport_key().to_bytes()));
        secrets.push(hex::encode(id.transport_key().to_keypair_bytes()));
    }
    for body in h.seen.borrow().iter().chain(p.req_api.seen.borrow().iter()) {
        for s in &secrets {
            assert!(!body.contains(s.as_str()), "secret leaked in {body}");
        }
    }
}
