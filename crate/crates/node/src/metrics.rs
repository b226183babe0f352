//! Counters exported by the admin API: verification work per request,
//! request sizes and transfer times.

use std::collections::VecDeque;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use datavault_core::VerifyCounts;

const MAX_RECORDS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Attestation,
    Presentation,
    Session,
    Mixed,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RequestRecord {
    /// An accessible-files request this node handled as host.
    HostedAccessibleFiles {
        peer: String,
        token_kind: TokenKind,
        tokens: usize,
        request_bytes: usize,
        verifications: u64,
        registry_lookups: u64,
        granted_files: usize,
        handle_ms: f64,
    },
    /// A file request this node handled as host.
    HostedFile {
        peer: String,
        path: String,
        outcome: String,
        bytes: usize,
        verifications: u64,
        transfer_ms: f64,
    },
    /// An accessible-files request this node sent as client.
    ClientAccessibleFiles {
        peer: String,
        token_kind: TokenKind,
        request_bytes: usize,
        round_trip_ms: f64,
        ok: bool,
    },
    /// A file fetch this node made as client.
    ClientFetch {
        peer: String,
        path: String,
        cache_hit: bool,
        bytes: usize,
        round_trip_ms: f64,
        ok: bool,
    },
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
pub struct Totals {
    pub signature_verifications: u64,
    pub registry_lookups: u64,
    pub accessible_files_requests: u64,
    pub file_requests: u64,
    pub file_requests_failed: u64,
    pub bytes_served: u64,
    pub client_requests: u64,
    pub client_fetches: u64,
    pub cache_hits: u64,
    pub wire_file_requests: u64,
    pub expired_token_retries: u64,
    pub log_blocks_proposed: u64,
    pub log_blocks_countersigned: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub totals: Totals,
    /// Host-side verification counts of the most recent accessible-files
    /// request.
    pub last_request: Option<VerifyCounts>,
    pub recent: Vec<RequestRecord>,
}

#[derive(Debug, Default)]
struct Inner {
    totals: Totals,
    last: Option<VerifyCounts>,
    recent: VecDeque<RequestRecord>,
}

#[derive(Debug, Default)]
pub struct Metrics {
    inner: Mutex<Inner>,
}

impl Metrics {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&self, f: impl FnOnce(&mut Totals)) {
        f(&mut self.inner.lock().expect("metrics lock poisoned").totals);
    }

    pub fn record(&self, rec: RequestRecord) {
        let mut inner = self.inner.lock().expect("metrics lock poisoned");
        match &rec {
            RequestRecord::HostedAccessibleFiles {
                verifications,
                registry_lookups,
                ..
            } => {
                inner.totals.accessible_files_requests += 1;
                inner.totals.signature_verifications += verifications;
                inner.totals.registry_lookups += registry_lookups;
                inner.last = Some(VerifyCounts {
                    signatures: *verifications,
                    registry_lookups: *registry_lookups,
                });
            }
            RequestRecord::HostedFile {
                outcome,
                bytes,
                verifications,
                ..
            } => {
                inner.totals.file_requests += 1;
                inner.totals.signature_verifications += verifications;
                if outcome == "ok" {
                    inner.totals.bytes_served += *bytes as u64;
                } else {
                    inner.totals.file_requests_failed += 1;
                }
            }
            RequestRecord::ClientAccessibleFiles { .. } => inner.totals.client_requests += 1,
            RequestRecord::ClientFetch { cache_hit, .. } => {
                inner.totals.client_fetches += 1;
                if *cache_hit {
                    inner.totals.cache_hits += 1;
                }
            }
        }
        if inner.recent.len() == MAX_RECORDS {
            inner.recent.pop_front();
        }
        inner.recent.push_back(rec);
    }

    pub fn snapshot(&self) -> MetricsSnapshot {
        let inner = self.inner.lock().expect("metrics lock poisoned");
        MetricsSnapshot {
            totals: inner.totals.clone(),
            last_request: inner.last,
            recent: inner.recent.iter().cloned().collect(),
        }
    }

    pub fn totals(&self) -> Totals {
        self.inner.lock().expect("metrics lock poisoned").totals.clone()
    }
}
