//! A running node: vault, wallet, endpoint, discovery and both protocol
//! roles, with lifecycle operations for the admin API and the CLI.

use std::collections::BTreeMap;
use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use ed25519_dalek::VerifyingKey;
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

use datavault_core::credential::{issue_sic, CredentialError, VerifiableCredential};
use datavault_core::keys::parse_public_key;
use datavault_core::transfer::TransferConfig;
use datavault_core::wire::{CredentialOffer, FailureReason, FileRequestFailed, Message, WireError};
use datavault_core::Value;

use crate::client::{Client, ClientError};
use crate::clock::{Clock, SystemClock};
use crate::config::{ConfigError, NodeConfig, TransportMode};
use crate::context::NodeContext;
use crate::discovery::{Discovery, PeerInfo};
use crate::endpoint::{Endpoint, Inbound, Peer};
use crate::host::Host;
use crate::metrics::Metrics;
use crate::registry::{Registry, RegistryClient, RegistryStore};
use crate::transport::{SimNetwork, Transport, UdpTransport};
use crate::vault::{UnlockReport, Vault, VaultError};
use crate::wallet::{Identity, Wallet, WalletSummary};

const DISCOVERY_POLL: Duration = Duration::from_millis(50);

#[derive(Debug, thiserror::Error)]
pub enum NodeError {
    #[error(transparent)]
    Vault(#[from] VaultError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("address {0} is already in use")]
    PortInUse(SocketAddr),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("vault holds no wallet")]
    NoWallet,
    #[error("wallet key does not match the running endpoint")]
    WalletMismatch,
    #[error("no live peer matches {0:?}")]
    UnknownPeer(String),
    #[error("{0:?} matches more than one peer")]
    AmbiguousPeer(String),
    #[error("peer DID unknown; pass the subject DID explicitly")]
    UnknownSubject,
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Credential(#[from] CredentialError),
}

/// Outcome of [`Node::init`].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct InitReport {
    pub did: String,
    pub transport_key: String,
    pub fingerprint: String,
    pub did_registered: bool,
}

/// External collaborators of a node. Tests swap in simulated ones.
#[derive(Clone)]
pub struct NodeDeps {
    pub registry: Arc<dyn Registry>,
    /// Bound transport; `None` binds according to the configuration.
    pub transport: Option<Arc<dyn Transport>>,
    pub clock: Arc<dyn Clock>,
    pub transfer: TransferConfig,
}

impl std::fmt::Debug for NodeDeps {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NodeDeps").field("transfer", &self.transfer).finish_non_exhaustive()
    }
}

/// The network shared by every node in this process that is configured
/// with the simulated transport.
pub fn process_sim_network() -> &'static SimNetwork {
    static NET: OnceLock<SimNetwork> = OnceLock::new();
    NET.get_or_init(|| SimNetwork::new(0))
}

/// Registry used when none is configured: every lookup fails as
/// unavailable.
pub fn offline_registry() -> Arc<dyn Registry> {
    let store = RegistryStore::new();
    store.set_down(true);
    Arc::new(store)
}

impl NodeDeps {
    pub fn from_config(cfg: &NodeConfig) -> Self {
        let registry: Arc<dyn Registry> = if cfg.registry_url.is_empty() {
            offline_registry()
        } else {
            Arc::new(RegistryClient::new(
                &cfg.registry_url,
                Duration::from_secs(cfg.registry_cache_ttl_secs),
            ))
        };
        Self {
            registry,
            transport: None,
            clock: Arc::new(SystemClock),
            transfer: TransferConfig::default(),
        }
    }
}

fn bind_transport(cfg: &NodeConfig) -> Result<Arc<dyn Transport>, NodeError> {
    let bound: io::Result<Arc<dyn Transport>> = match cfg.transport {
        TransportMode::Udp => UdpTransport::bind(cfg.listen).map(|t| Arc::new(t) as Arc<dyn Transport>),
        TransportMode::Simulated => process_sim_network().bind(cfg.listen).map(|t| Arc::new(t) as Arc<dyn Transport>),
    };
    bound.map_err(|e| match e.kind() {
        io::ErrorKind::AddrInUse => NodeError::PortInUse(cfg.listen),
        _ => NodeError::Io(e),
    })
}

fn iso_now(clock: &dyn Clock) -> String {
    OffsetDateTime::from_unix_timestamp(clock.now_secs() as i64)
        .ok()
        .and_then(|t| t.format(&Rfc3339).ok())
        .unwrap_or_else(|| "1970-01-01T00:00:00Z".into())
}

struct Dispatcher {
    ctx: Arc<NodeContext>,
    host: Host,
    discovery: Arc<Mutex<Discovery>>,
    epoch: Instant,
}

impl Inbound for Dispatcher {
    fn on_message(&self, ep: &Endpoint, from: Peer, msg: Message) {
        match msg {
            Message::AccessibleFilesRequest(req) => self.host.serve_accessible_files(ep, &from, &req),
            Message::FileRequest(req) => self.host.serve_file_request(ep, &from, &req),
            Message::LogAgreement(m) => {
                self.host.on_log_agreement(&from, &m);
            }
            Message::LogProposal(m) => {
                self.ctx.countersign_proposal(ep, &from, &m);
            }
            Message::CredentialOffer(offer) => {
                if self.ctx.accept_credential(&from, offer) {
                    log::info!("stored a credential offered by {}", from.addr);
                }
            }
            other => log::debug!("unsolicited {} from {}", other.name(), from.addr),
        }
    }

    fn on_malformed(&self, ep: &Endpoint, from: Peer, request_id: Option<u64>, err: WireError) {
        log::debug!("malformed message from {}: {err}", from.addr);
        if let Some(request_id) = request_id {
            let reply = Message::FileRequestFailed(FileRequestFailed {
                request_id,
                reason: FailureReason::Malformed,
                detail: Some(err.to_string()),
            });
            if let Err(e) = ep.send(&from, &reply) {
                log::debug!("malformed reply to {} failed: {e}", from.addr);
            }
        }
    }

    fn on_announce(&self, _ep: &Endpoint, from: SocketAddr, key: VerifyingKey, body: &[u8]) {
        let now = self.epoch.elapsed().as_millis() as u64;
        let mut d = self.discovery.lock().expect("discovery lock poisoned");
        if d.on_announce(from, &key, body, now) {
            log::info!("discovered peer {} at {from}", Peer { key, addr: from }.fingerprint().to_hex());
        }
    }
}

pub struct Node {
    cfg: NodeConfig,
    ctx: Arc<NodeContext>,
    ep: Endpoint,
    host: Host,
    client: Client,
    discovery: Arc<Mutex<Discovery>>,
    epoch: Instant,
    stop: Arc<AtomicBool>,
    tasks: Mutex<Vec<JoinHandle<()>>>,
    shut_down: AtomicBool,
}

impl std::fmt::Debug for Node {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Node").field("ep", &self.ep).finish_non_exhaustive()
    }
}

impl Node {
    /// Creates the vault, generates the identity and registers the DID. A
    /// registry failure leaves the DID unregistered with a warning. The
    /// vault is left locked.
    pub fn init(cfg: &NodeConfig, password: &str, registry: &dyn Registry, clock: &dyn Clock) -> Result<InitReport, NodeError> {
        cfg.validate()?;
        let vault = Vault::init(&cfg.vault_dir, password, cfg.kdf_iterations)?;
        vault.unlock(password)?;
        let mut wallet = Wallet::new(Identity::generate());
        match registry.register_did(&wallet.identity.did_document(clock.now_secs())) {
            Ok(()) => wallet.did_registered = true,
            Err(e) => log::warn!("DID registration deferred: {e}"),
        }
        wallet.save(&vault)?;
        let report = InitReport {
            did: wallet.identity.did().into(),
            transport_key: datavault_core::keys::key_hex(&wallet.identity.transport_public()),
            fingerprint: wallet.identity.fingerprint().to_hex(),
            did_registered: wallet.did_registered,
        };
        drop(wallet);
        vault.lock()?;
        Ok(report)
    }

    /// Unlocks the vault and starts the endpoint and discovery.
    pub fn start(cfg: NodeConfig, password: &str, deps: NodeDeps) -> Result<Arc<Node>, NodeError> {
        cfg.validate()?;
        let vault = Arc::new(Vault::open(&cfg.vault_dir)?);
        vault.unlock(password)?;
        let wallet = match Wallet::load(&vault) {
            Ok(Some(w)) => w,
            Ok(None) => {
                vault.lock()?;
                return Err(NodeError::NoWallet);
            }
            Err(e) => {
                vault.lock()?;
                return Err(e.into());
            }
        };
        let transport_key = wallet.identity.transport_key().clone();
        let chain = NodeContext::load_chain(&vault, transport_key.verifying_key())?;
        let transport = match deps.transport.clone() {
            Some(t) => t,
            None => bind_transport(&cfg)?,
        };
        let listen = transport.local_addr();
        let mut discovery = Discovery::new(
            transport_key.verifying_key(),
            listen,
            cfg.bootstrap.clone(),
            cfg.announce_interval_ms,
            cfg.peer_timeout_ms,
        );
        discovery.set_did(Some(wallet.identity.did().to_string()));
        let discovery = Arc::new(Mutex::new(discovery));
        let ctx = Arc::new(NodeContext {
            vault,
            wallet: std::sync::RwLock::new(Some(wallet)),
            registry: deps.registry.clone(),
            clock: deps.clock.clone(),
            chains: Mutex::new(chain),
            metrics: Metrics::new(),
            transport_key: transport_key.verifying_key(),
            token_ttl_secs: cfg.token_ttl_secs,
            request_timeout: Duration::from_millis(cfg.request_timeout_ms),
        });
        let host = Host::new(ctx.clone());
        let epoch = Instant::now();
        let dispatcher = Arc::new(Dispatcher {
            ctx: ctx.clone(),
            host: host.clone(),
            discovery: discovery.clone(),
            epoch,
        });
        let ep = Endpoint::start(transport, transport_key, deps.transfer, dispatcher)?;
        let client = Client::new(ep.clone(), ctx.clone(), cfg.cache_capacity);
        let node = Arc::new(Node {
            cfg,
            ctx,
            ep,
            host,
            client,
            discovery,
            epoch,
            stop: Arc::new(AtomicBool::new(false)),
            tasks: Mutex::new(Vec::new()),
            shut_down: AtomicBool::new(false),
        });
        node.retry_did_registration();
        let handle = {
            let ep = node.ep.clone();
            let discovery = node.discovery.clone();
            let stop = node.stop.clone();
            std::thread::Builder::new()
                .name(format!("discovery-{listen}"))
                .spawn(move || discovery_loop(ep, discovery, stop, epoch))?
        };
        node.tasks.lock().expect("task lock poisoned").push(handle);
        log::info!("node {} listening on {listen}", node.fingerprint());
        Ok(node)
    }

    fn retry_did_registration(&self) {
        let doc = {
            let guard = self.ctx.wallet();
            match guard.as_ref() {
                Some(w) if !w.did_registered => w.identity.did_document(self.ctx.clock.now_secs()),
                _ => return,
            }
        };
        match self.ctx.registry.register_did(&doc) {
            Ok(()) => {
                if let Err(e) = self.ctx.update_wallet(|w| w.did_registered = true) {
                    log::warn!("wallet not saved: {e}");
                }
                log::info!("registered DID {}", doc.did);
            }
            Err(e) => log::warn!("DID registration still deferred: {e}"),
        }
    }

    pub fn config(&self) -> &NodeConfig {
        &self.cfg
    }

    pub fn ctx(&self) -> &Arc<NodeContext> {
        &self.ctx
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.ep
    }

    pub fn host(&self) -> &Host {
        &self.host
    }

    pub fn client(&self) -> &Client {
        &self.client
    }

    pub fn vault(&self) -> &Arc<Vault> {
        &self.ctx.vault
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.ep.local_addr()
    }

    pub fn public_key(&self) -> VerifyingKey {
        self.ep.public_key()
    }

    pub fn fingerprint(&self) -> String {
        self.ep.fingerprint().to_hex()
    }

    /// This node as a peer of others.
    pub fn as_peer(&self) -> Peer {
        Peer {
            key: self.public_key(),
            addr: self.local_addr(),
        }
    }

    pub fn metrics(&self) -> &Metrics {
        &self.ctx.metrics
    }

    pub fn is_unlocked(&self) -> bool {
        self.ctx.vault.is_unlocked()
    }

    fn discovery_now(&self) -> u64 {
        self.epoch.elapsed().as_millis() as u64
    }

    pub fn peers(&self) -> Vec<PeerInfo> {
        let now = self.discovery_now();
        self.discovery.lock().expect("discovery lock poisoned").live_peers(now)
    }

    /// Resolves `spec` to a peer: `<key hex>@<addr>`, or a live peer by key
    /// or fingerprint prefix or by address.
    pub fn resolve_peer(&self, spec: &str) -> Result<Peer, NodeError> {
        if let Some((key, addr)) = spec.split_once('@') {
            let key = parse_public_key(key).map_err(|_| NodeError::UnknownPeer(spec.into()))?;
            let addr = addr.parse().map_err(|_| NodeError::UnknownPeer(spec.into()))?;
            return Ok(Peer { key, addr });
        }
        let now = self.discovery_now();
        let found = self.discovery.lock().expect("discovery lock poisoned").find(spec, now);
        match found.as_slice() {
            [] => Err(NodeError::UnknownPeer(spec.into())),
            [p] => Ok(Peer {
                key: parse_public_key(&p.key).map_err(|_| NodeError::UnknownPeer(spec.into()))?,
                addr: p.addr,
            }),
            _ => Err(NodeError::AmbiguousPeer(spec.into())),
        }
    }

    fn peer_did(&self, peer: &Peer) -> Option<String> {
        let hex = datavault_core::keys::key_hex(&peer.key);
        self.peers().into_iter().find(|p| p.key == hex).and_then(|p| p.did)
    }

    pub fn wallet_summary(&self) -> Result<WalletSummary, NodeError> {
        self.ctx.wallet().as_ref().map(|w| w.summary()).ok_or(NodeError::Vault(VaultError::Locked))
    }

    /// Issues a self-issued credential to `peer` and delivers it. The
    /// subject is `subject` or the DID the peer announces.
    pub fn issue_sic(
        &self,
        peer: &Peer,
        subject: Option<String>,
        claims: BTreeMap<String, Value>,
    ) -> Result<VerifiableCredential, NodeError> {
        let subject = subject.or_else(|| self.peer_did(peer)).ok_or(NodeError::UnknownSubject)?;
        let date = iso_now(&*self.ctx.clock);
        let vc = self.ctx.update_wallet(|w| {
            w.issued_count += 1;
            let id = format!("{}#sic-{}", w.identity.did(), w.issued_count);
            issue_sic(&w.identity.did_signer(), &id, &subject, claims, &date)
        })??;
        self.client.offer_credential(peer, CredentialOffer { credential: vc.clone() })?;
        Ok(vc)
    }

    /// Adds an issuer to the trusted list. Returns false if already present.
    pub fn trust(&self, issuer: &str) -> Result<bool, NodeError> {
        Ok(self.ctx.update_wallet(|w| w.trusted.grant_trust(issuer))?)
    }

    pub fn distrust(&self, issuer: &str) -> Result<bool, NodeError> {
        Ok(self.ctx.update_wallet(|w| w.trusted.revoke_trust(issuer))?)
    }

    /// Drops the wallet, the fetch cache and session tokens, and the vault
    /// keys. The endpoint keeps running and refuses data requests.
    pub fn lock(&self) -> Result<(), NodeError> {
        {
            let chain = self.ctx.chains();
            if self.ctx.vault.is_unlocked() {
                self.ctx.persist_chain(&chain);
            }
        }
        *self.ctx.wallet_mut() = None;
        self.client.clear_cache();
        self.client.forget_all_sessions();
        self.ctx.vault.lock()?;
        Ok(())
    }

    pub fn unlock(&self, password: &str) -> Result<UnlockReport, NodeError> {
        let report = self.ctx.vault.unlock(password)?;
        let wallet = match Wallet::load(&self.ctx.vault) {
            Ok(Some(w)) if w.identity.transport_public() == self.public_key() => w,
            other => {
                self.ctx.vault.lock()?;
                return Err(match other {
                    Err(e) => e.into(),
                    Ok(None) => NodeError::NoWallet,
                    Ok(Some(_)) => NodeError::WalletMismatch,
                });
            }
        };
        *self.ctx.wallet_mut() = Some(wallet);
        let chain = self.ctx.chains();
        self.ctx.persist_chain(&chain);
        Ok(report)
    }

    pub fn is_shut_down(&self) -> bool {
        self.shut_down.load(Ordering::SeqCst)
    }

    /// Stops discovery and the endpoint, flushes the access log and locks
    /// the vault. Idempotent.
    pub fn shutdown(&self) {
        if self.shut_down.swap(true, Ordering::SeqCst) {
            return;
        }
        self.stop.store(true, Ordering::SeqCst);
        for t in self.tasks.lock().expect("task lock poisoned").drain(..) {
            let _ = t.join();
        }
        self.ep.shutdown();
        if let Err(e) = self.lock() {
            log::warn!("lock on shutdown failed: {e}");
        }
        log::info!("node {} stopped", self.fingerprint());
    }
}

impl Drop for Node {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn discovery_loop(ep: Endpoint, discovery: Arc<Mutex<Discovery>>, stop: Arc<AtomicBool>, epoch: Instant) {
    while !stop.load(Ordering::SeqCst) && ep.is_running() {
        let now = epoch.elapsed().as_millis() as u64;
        let (targets, body) = {
            let mut d = discovery.lock().expect("discovery lock poisoned");
            let targets = d.tick(now);
            let body = if targets.is_empty() { Vec::new() } else { d.announce_body(now) };
            (targets, body)
        };
        for t in targets {
            ep.send_public(t, &body);
        }
        std::thread::sleep(DISCOVERY_POLL);
    }
}
