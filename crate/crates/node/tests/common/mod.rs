#![allow(dead_code)]

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use datavault::clock::MockClock;
use datavault::config::{NodeConfig, TransportMode};
use datavault::endpoint::{Endpoint, Inbound, Peer};
use datavault::node::{Node, NodeDeps};
use datavault::registry::{IssuerRecord, Registry, RegistryStore};
use datavault::transport::SimNetwork;
use datavault_core::credential::{Attestation, Claim, DidSigner, VerifiableCredential};
use datavault_core::did::{did_for_key, DidDocument, PublicKeyEntry};
use datavault_core::transfer::TransferConfig;
use datavault_core::wire::{FileResponse, Message, WireError};
use datavault_core::{Fingerprint, Value, VaultPath};
use ed25519_dalek::{SigningKey, VerifyingKey};
use rand::rngs::OsRng;
use tempfile::TempDir;

pub const PASSWORD: &str = "correct horse battery staple";

pub struct Net {
    pub sim: SimNetwork,
    pub registry: Arc<RegistryStore>,
    pub clock: MockClock,
    pub transfer: TransferConfig,
    pub token_ttl_secs: u64,
    dirs: Vec<TempDir>,
}

impl Net {
    pub fn new() -> Self {
        Self {
            sim: SimNetwork::new(7),
            registry: Arc::new(RegistryStore::new()),
            clock: MockClock::new(),
            transfer: TransferConfig::default(),
            token_ttl_secs: 300,
            dirs: Vec::new(),
        }
    }

    pub fn config(&mut self) -> NodeConfig {
        let dir = tempfile::tempdir().unwrap();
        let cfg = NodeConfig {
            listen: "127.0.0.1:0".parse().unwrap(),
            vault_dir: dir.path().join("vault"),
            transport: TransportMode::Simulated,
            admin_port: 0,
            announce_interval_ms: 100,
            peer_timeout_ms: 2000,
            kdf_iterations: 1000,
            token_ttl_secs: self.token_ttl_secs,
            request_timeout_ms: 30_000,
            ..NodeConfig::default()
        };
        self.dirs.push(dir);
        cfg
    }

    pub fn deps(&self) -> NodeDeps {
        NodeDeps {
            registry: self.registry.clone(),
            transport: Some(Arc::new(self.sim.bind("127.0.0.1:0".parse().unwrap()).unwrap())),
            clock: Arc::new(self.clock.clone()),
            transfer: self.transfer,
        }
    }

    pub fn spawn_with(&mut self, cfg: NodeConfig) -> Arc<Node> {
        Node::init(&cfg, PASSWORD, &*self.registry, &self.clock).unwrap();
        Node::start(cfg, PASSWORD, self.deps()).unwrap()
    }

    pub fn spawn(&mut self) -> Arc<Node> {
        let cfg = self.config();
        self.spawn_with(cfg)
    }
}

/// A third-party issuer registered and accredited at the registry.
pub struct Issuer {
    pub did: String,
    pub key: SigningKey,
}

impl Issuer {
    pub fn accredited(registry: &RegistryStore, label: &str) -> Self {
        let key = SigningKey::generate(&mut OsRng);
        let did = did_for_key(&key.verifying_key());
        let doc = DidDocument::new(
            did.clone(),
            vec![PublicKeyEntry {
                id: "key-1".into(),
                key: key.verifying_key(),
            }],
            0,
        );
        registry.register_did(&doc).unwrap();
        registry
            .accredit_issuer(&IssuerRecord {
                did: did.clone(),
                label: label.into(),
            })
            .unwrap();
        Self { did, key }
    }

    pub fn issue(&self, subject: &str, claims: &[(&str, Value)]) -> VerifiableCredential {
        let claims: BTreeMap<String, Value> = claims.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        let signer = DidSigner {
            did: &self.did,
            key_id: "key-1",
            key: &self.key,
        };
        let id = format!("urn:vc:{}", rand::random::<u64>());
        VerifiableCredential::issue(&signer, &id, subject, claims, "2024-01-01").unwrap()
    }
}

pub fn give_credential(node: &Node, vc: VerifiableCredential) {
    node.ctx().update_wallet(|w| w.add_credential(vc)).unwrap();
}

/// Issues one attestation per claim, bound to `holder` and signed by
/// `attestor`, and stores them in the holder's wallet.
pub fn give_attestations(holder: &Node, attestor: &SigningKey, claims: &[(&str, Value)]) {
    let fp: Fingerprint = holder.endpoint().fingerprint();
    for (k, v) in claims {
        let att = Attestation::issue(
            attestor,
            Claim {
                name: k.to_string(),
                value: v.clone(),
            },
            fp,
        );
        holder.ctx().update_wallet(|w| w.add_attestation(att)).unwrap();
    }
}

pub fn did_of(node: &Node) -> String {
    node.wallet_summary().unwrap().did
}

pub fn wait_until(timeout: Duration, mut f: impl FnMut() -> bool) -> bool {
    let start = Instant::now();
    while start.elapsed() < timeout {
        if f() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    f()
}

/// Counts received `FileResponse` messages whose payload matches `expected`.
struct Sink {
    expected: Vec<u8>,
    intact: AtomicU64,
    corrupt: AtomicU64,
}

impl Inbound for Sink {
    fn on_message(&self, _: &Endpoint, _: Peer, msg: Message) {
        match msg {
            Message::FileResponse(r) if r.payload == self.expected => self.intact.fetch_add(1, Ordering::Relaxed),
            _ => self.corrupt.fetch_add(1, Ordering::Relaxed),
        };
    }
    fn on_malformed(&self, _: &Endpoint, _: Peer, _: Option<u64>, _: WireError) {
        self.corrupt.fetch_add(1, Ordering::Relaxed);
    }
    fn on_announce(&self, _: &Endpoint, _: SocketAddr, _: VerifyingKey, _: &[u8]) {}
}

#[derive(Debug, Clone, Copy)]
pub struct LossyReport {
    pub attempted: u64,
    pub acknowledged: u64,
    pub intact: u64,
    pub corrupt: u64,
    pub retransmissions: u64,
    pub dropped_datagrams: u64,
    pub elapsed: Duration,
}

/// Sends `transfers` messages carrying `size` bytes each across `pairs`
/// endpoint pairs in parallel over a simulated network with the given loss.
pub fn lossy_batch(transfers: u64, size: usize, loss: f64, pairs: u64, cfg: TransferConfig) -> LossyReport {
    let net = SimNetwork::new(0x1055);
    net.set_loss(loss);
    let payload: Vec<u8> = (0..size).map(|i| (i * 31 % 251) as u8).collect();
    let sink = Arc::new(Sink {
        expected: payload.clone(),
        intact: AtomicU64::new(0),
        corrupt: AtomicU64::new(0),
    });
    let start = Instant::now();
    let mut endpoints = Vec::new();
    let mut handles = Vec::new();
    for i in 0..pairs {
        let a = Endpoint::start(
            Arc::new(net.bind(format!("10.1.0.{}:9000", i + 1).parse().unwrap()).unwrap()),
            SigningKey::generate(&mut OsRng),
            cfg,
            sink.clone(),
        )
        .unwrap();
        let b = Endpoint::start(
            Arc::new(net.bind(format!("10.2.0.{}:9000", i + 1).parse().unwrap()).unwrap()),
            SigningKey::generate(&mut OsRng),
            cfg,
            sink.clone(),
        )
        .unwrap();
        let to = Peer {
            key: b.public_key(),
            addr: b.local_addr(),
        };
        let share = transfers / pairs + u64::from(i < transfers % pairs);
        let sender = a.clone();
        let payload = payload.clone();
        handles.push(std::thread::spawn(move || {
            let mut ok = 0u64;
            for n in 0..share {
                let msg = Message::FileResponse(FileResponse {
                    request_id: n,
                    path: VaultPath::parse("lossy.bin").unwrap(),
                    sha256: String::new(),
                    payload: payload.clone(),
                });
                if sender.send(&to, &msg).is_ok() {
                    ok += 1;
                }
            }
            ok
        }));
        endpoints.push((a, b));
    }
    let acknowledged = handles.into_iter().map(|h| h.join().unwrap()).sum();
    let elapsed = start.elapsed();
    wait_until(Duration::from_secs(5), || sink.intact.load(Ordering::Relaxed) + sink.corrupt.load(Ordering::Relaxed) >= acknowledged);
    let mut retransmissions = 0;
    for (a, b) in &endpoints {
        retransmissions += a.stats().retransmissions.load(Ordering::Relaxed) + b.stats().retransmissions.load(Ordering::Relaxed);
        a.shutdown();
        b.shutdown();
    }
    LossyReport {
        attempted: transfers,
        acknowledged,
        intact: sink.intact.load(Ordering::Relaxed),
        corrupt: sink.corrupt.load(Ordering::Relaxed),
        retransmissions,
        dropped_datagrams: net.stats().1,
        elapsed,
    }
}

/// Retransmission timers scaled down for in-process links.
pub fn fast_transfer() -> TransferConfig {
    TransferConfig {
        initial_rto_ms: 5,
        max_rto_ms: 40,
        ..TransferConfig::default()
    }
}
