//! Experiment harness: two in-process nodes exchange one file per request
//! for every access-token type and emit one CSV row per request, plus a
//! CTR versus CBC cipher throughput comparison.

use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use aes::cipher::{BlockDecryptMut, BlockEncryptMut, KeyIvInit, StreamCipher};
use aes::Aes256;
use cbc::cipher::block_padding::NoPadding;
use ed25519_dalek::SigningKey;
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use datavault_core::credential::{Attestation, Claim, DidSigner, VerifiableCredential};
use datavault_core::did::{did_for_key, DidDocument, PublicKeyEntry};
use datavault_core::keys::key_hex;
use datavault_core::policy::{parse_expr, PolicySlot};
use datavault_core::transfer::TransferConfig;
use datavault_core::{Value, VaultPath};

use crate::client::{Session, TokenChoice};
use crate::clock::SystemClock;
use crate::config::{NodeConfig, TransportMode};
use crate::node::{Node, NodeDeps, NodeError};
use crate::registry::{IssuerRecord, Registry, RegistryStore};
use crate::transport::{SimNetwork, Transport, UdpTransport};

const BENCH_PASSWORD: &str = "bench";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchToken {
    Attestation,
    Vp,
    Session,
    Baseline,
}

impl BenchToken {
    pub const ALL: [BenchToken; 4] = [BenchToken::Attestation, BenchToken::Vp, BenchToken::Session, BenchToken::Baseline];

    pub fn name(self) -> &'static str {
        match self {
            BenchToken::Attestation => "attestation",
            BenchToken::Vp => "vp",
            BenchToken::Session => "session",
            BenchToken::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// Pause between consecutive requests.
    pub delta: Duration,
    pub size_bytes: usize,
    pub runs: usize,
    pub transport: TransportMode,
    /// Scratch directory for the two vaults; removed afterwards.
    pub workdir: PathBuf,
    pub tokens: Vec<BenchToken>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            delta: Duration::from_secs(5),
            size_bytes: 220_000,
            runs: 50,
            transport: TransportMode::Udp,
            workdir: std::env::temp_dir().join(format!("datavault-bench-{}", std::process::id())),
            tokens: BenchToken::ALL.to_vec(),
        }
    }
}

/// One request: an accessible-files exchange followed by one file request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub token_type: BenchToken,
    pub run: usize,
    /// Encoded size of the accessible-files request.
    pub request_bytes: usize,
    /// Host-side signature verifications for the accessible-files request.
    pub verifications: u64,
    pub registry_lookups: u64,
    pub afr_ms: f64,
    pub transfer_ms: f64,
    pub total_ms: f64,
    pub file_bytes: usize,
    pub ok: bool,
}

pub const CSV_HEADER: &str =
    "token_type,run,request_bytes,verifications,registry_lookups,afr_ms,transfer_ms,total_ms,file_bytes,ok";

pub fn write_csv<W: Write>(out: W, rows: &[BenchRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for r in rows {
        w.write_record([
            r.token_type.name().to_string(),
            r.run.to_string(),
            r.request_bytes.to_string(),
            r.verifications.to_string(),
            r.registry_lookups.to_string(),
            format!("{:.3}", r.afr_ms),
            format!("{:.3}", r.transfer_ms),
            format!("{:.3}", r.total_ms),
            r.file_bytes.to_string(),
            r.ok.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Two running nodes set up for the experiment: the requester holds three
/// attestations and one registry-backed credential satisfying the host's
/// policy on `PROTECTED`.
pub struct BenchPair {
    pub host: Arc<Node>,
    pub requester: Arc<Node>,
    pub registry: Arc<RegistryStore>,
    pub payload: Vec<u8>,
    workdir: PathBuf,
}

pub const PROTECTED: &str = "bench/protected/data.bin";
pub const PUBLIC: &str = "bench/public/data.bin";

fn bind(mode: TransportMode, sim: &SimNetwork) -> Result<Arc<dyn Transport>, NodeError> {
    let any: SocketAddr = "127.0.0.1:0".parse().expect("literal");
    Ok(match mode {
        TransportMode::Udp => Arc::new(UdpTransport::bind(any)?),
        TransportMode::Simulated => Arc::new(sim.bind(any)?),
    })
}

impl BenchPair {
    pub fn start(cfg: &BenchConfig) -> Result<Self, NodeError> {
        let registry = Arc::new(RegistryStore::new());
        let sim = SimNetwork::new(1);
        std::fs::create_dir_all(&cfg.workdir)?;
        let mut nodes = Vec::new();
        for name in ["host", "requester"] {
            let node_cfg = NodeConfig {
                listen: "127.0.0.1:0".parse().expect("literal"),
                vault_dir: cfg.workdir.join(name),
                transport: cfg.transport,
                kdf_iterations: 10_000,
                ..NodeConfig::default()
            };
            Node::init(&node_cfg, BENCH_PASSWORD, &*registry, &SystemClock)?;
            let deps = NodeDeps {
                registry: registry.clone(),
                transport: Some(bind(cfg.transport, &sim)?),
                clock: Arc::new(SystemClock),
                transfer: TransferConfig::default(),
            };
            nodes.push(Node::start(node_cfg, BENCH_PASSWORD, deps)?);
        }
        let requester = nodes.pop().expect("two nodes");
        let host = nodes.pop().expect("two nodes");

        let mut payload = vec![0u8; cfg.size_bytes];
        OsRng.fill_bytes(&mut payload);
        let protected = VaultPath::parse(PROTECTED).expect("literal");
        host.vault().put(&protected, &payload)?;
        host.vault().put(&VaultPath::parse(PUBLIC).expect("literal"), &payload)?;
        let policy = parse_expr("age gte 18").expect("literal policy");
        host.vault().set_policy(&protected.parent().expect("has parent"), PolicySlot::Combined, Some(policy))?;

        let attestor = SigningKey::generate(&mut OsRng);
        host.trust(&key_hex(&attestor.verifying_key()))?;
        let fp = requester.endpoint().fingerprint();
        for (name, value) in [("age", Value::Int(30)), ("country", "NL".into()), ("member", "yes".into())] {
            let att = Attestation::issue(&attestor, Claim { name: name.into(), value }, fp);
            requester.ctx().update_wallet(|w| w.add_attestation(att))?;
        }

        let issuer_key = SigningKey::generate(&mut OsRng);
        let issuer_did = did_for_key(&issuer_key.verifying_key());
        let doc = DidDocument::new(
            issuer_did.clone(),
            vec![PublicKeyEntry {
                id: "key-1".into(),
                key: issuer_key.verifying_key(),
            }],
            0,
        );
        registry.register_did(&doc).map_err(|e| std::io::Error::other(e.to_string()))?;
        registry
            .accredit_issuer(&IssuerRecord {
                did: issuer_did.clone(),
                label: "bench issuer".into(),
            })
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        let subject = requester.wallet_summary()?.did;
        let signer = DidSigner {
            did: &issuer_did,
            key_id: "key-1",
            key: &issuer_key,
        };
        let vc = VerifiableCredential::issue(
            &signer,
            "urn:bench:age",
            &subject,
            [("age".to_string(), Value::Int(30))].into(),
            "2024-01-01",
        )?;
        requester.ctx().update_wallet(|w| w.add_credential(vc))?;

        Ok(Self {
            host,
            requester,
            registry,
            payload,
            workdir: cfg.workdir.clone(),
        })
    }

    fn choice(token: BenchToken) -> TokenChoice {
        match token {
            BenchToken::Attestation => TokenChoice::Attestations,
            BenchToken::Vp => TokenChoice::Presentation,
            BenchToken::Session => TokenChoice::Session,
            BenchToken::Baseline => TokenChoice::Empty,
        }
    }

    /// Runs one request of the given type.
    pub fn run_once(&self, token: BenchToken, run: usize) -> BenchRow {
        let peer = self.host.as_peer();
        let client = self.requester.client();
        let path = VaultPath::parse(if token == BenchToken::Baseline { PUBLIC } else { PROTECTED }).expect("literal");
        if token == BenchToken::Session && client.session(&peer).is_none() {
            if let Err(e) = client.accessible_files(&peer, &TokenChoice::Attestations) {
                log::warn!("session setup failed: {e}");
            }
        }
        let choice = Self::choice(token);
        let request_bytes = client
            .tokens(&peer, &choice)
            .ok()
            .and_then(|tokens| {
                datavault_core::wire::encode(&datavault_core::wire::Message::AccessibleFilesRequest(
                    datavault_core::wire::AccessibleFilesRequest {
                        request_id: 0,
                        timestamp: 0,
                        access_tokens: tokens,
                        chain_tip: self.requester.ctx().chains().tip(),
                    },
                ))
                .ok()
            })
            .map(|b| b.len())
            .unwrap_or(0);
        let started = Instant::now();
        let session: Option<Session> = client.accessible_files(&peer, &choice).ok();
        let afr_ms = started.elapsed().as_secs_f64() * 1000.0;
        let counts = self.host.metrics().snapshot().last_request.unwrap_or_default();
        let fetch_started = Instant::now();
        let bytes = session.as_ref().and_then(|s| client.file_request(&peer, s, &path).ok());
        let transfer_ms = fetch_started.elapsed().as_secs_f64() * 1000.0;
        BenchRow {
            token_type: token,
            run,
            request_bytes,
            verifications: counts.signatures,
            registry_lookups: counts.registry_lookups,
            afr_ms,
            transfer_ms,
            total_ms: started.elapsed().as_secs_f64() * 1000.0,
            file_bytes: bytes.as_ref().map_or(0, Vec::len),
            ok: bytes.as_deref() == Some(self.payload.as_slice()),
        }
    }

    pub fn shutdown(&self) {
        self.requester.shutdown();
        self.host.shutdown();
    }
}

impl Drop for BenchPair {
    fn drop(&mut self) {
        self.shutdown();
        let _ = std::fs::remove_dir_all(&self.workdir);
    }
}

/// Runs `cfg.runs` requests per token type, pausing `cfg.delta` between
/// requests. `on_row` sees every row as it completes.
pub fn run(cfg: &BenchConfig, mut on_row: impl FnMut(&BenchRow)) -> Result<Vec<BenchRow>, NodeError> {
    let pair = BenchPair::start(cfg)?;
    let mut rows = Vec::with_capacity(cfg.runs * cfg.tokens.len());
    let mut first = true;
    for &token in &cfg.tokens {
        for run in 0..cfg.runs {
            if !first {
                std::thread::sleep(cfg.delta);
            }
            first = false;
            let row = pair.run_once(token, run);
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CipherBench {
    pub bytes: usize,
    pub ctr_encrypt_mib_s: f64,
    pub ctr_decrypt_mib_s: f64,
    pub cbc_encrypt_mib_s: f64,
    pub cbc_decrypt_mib_s: f64,
}

impl CipherBench {
    pub fn ctr_not_slower(&self) -> bool {
        self.ctr_encrypt_mib_s >= self.cbc_encrypt_mib_s
    }
}

type Aes256Ctr = ctr::Ctr128BE<Aes256>;

fn best_of<F: FnMut()>(rounds: usize, mut f: F) -> Duration {
    (0..rounds)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed()
        })
        .min()
        .unwrap_or_default()
}

/// AES-256 in CTR and CBC mode over the same buffer, best of `rounds`.
/// `bytes` is rounded down to whole blocks.
pub fn cipher_benchmark(bytes: usize, rounds: usize) -> CipherBench {
    let len = bytes / 16 * 16;
    let mut key = [0u8; 32];
    let mut iv = [0u8; 16];
    OsRng.fill_bytes(&mut key);
    OsRng.fill_bytes(&mut iv);
    let mut buf = vec![0u8; len];
    OsRng.fill_bytes(&mut buf);
    let original = buf.clone();
    let rounds = rounds.max(1);
    let mib = len as f64 / (1024.0 * 1024.0);

    let ctr_enc = best_of(rounds, || {
        buf.copy_from_slice(&original);
        Aes256Ctr::new(&key.into(), &iv.into()).apply_keystream(&mut buf);
    });
    let ctr_ct = buf.clone();
    let ctr_dec = best_of(rounds, || {
        buf.copy_from_slice(&ctr_ct);
        Aes256Ctr::new(&key.into(), &iv.into()).apply_keystream(&mut buf);
    });
    assert!(buf == original, "CTR round trip");

    let cbc_enc = best_of(rounds, || {
        buf.copy_from_slice(&original);
        cbc::Encryptor::<Aes256>::new(&key.into(), &iv.into())
            .encrypt_padded_mut::<NoPadding>(&mut buf, len)
            .expect("block-aligned");
    });
    let cbc_ct = buf.clone();
    let cbc_dec = best_of(rounds, || {
        buf.copy_from_slice(&cbc_ct);
        cbc::Decryptor::<Aes256>::new(&key.into(), &iv.into())
            .decrypt_padded_mut::<NoPadding>(&mut buf)
            .expect("block-aligned");
    });
    assert!(buf == original, "CBC round trip");

    let rate = |d: Duration| mib / d.as_secs_f64().max(1e-9);
    CipherBench {
        bytes: len,
        ctr_encrypt_mib_s: rate(ctr_enc),
        ctr_decrypt_mib_s: rate(ctr_dec),
        cbc_encrypt_mib_s: rate(cbc_enc),
        cbc_decrypt_mib_s: rate(cbc_dec),
    }
}
