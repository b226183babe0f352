//! Peer discovery by periodic signed announces with one hop of gossip.
//!
//! Each announce names the sender's listen address and the live peers it
//! knows. A peer counts as live only after its own announce arrived within
//! the timeout window; gossiped addresses are merely candidates to
//! announce to.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;

use ed25519_dalek::VerifyingKey;
use serde::{Deserialize, Serialize};

use datavault_core::keys::{key_hex, parse_public_key};
use datavault_core::Fingerprint;

const MAX_GOSSIP: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GossipEntry {
    pub key: String,
    pub addr: SocketAddr,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Announce {
    #[serde(rename = "type")]
    pub kind: String,
    pub listen: SocketAddr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub did: Option<String>,
    pub peers: Vec<GossipEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerInfo {
    pub key: String,
    pub fingerprint: String,
    pub addr: SocketAddr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub did: Option<String>,
    pub last_seen_ms: u64,
}

#[derive(Debug)]
pub struct Discovery {
    me: VerifyingKey,
    listen: SocketAddr,
    bootstrap: Vec<SocketAddr>,
    interval_ms: u64,
    timeout_ms: u64,
    did: Option<String>,
    live: BTreeMap<[u8; 32], (SocketAddr, u64)>,
    dids: BTreeMap<[u8; 32], String>,
    candidates: BTreeSet<SocketAddr>,
    next_tick: u64,
}

impl Discovery {
    pub fn new(me: VerifyingKey, listen: SocketAddr, bootstrap: Vec<SocketAddr>, interval_ms: u64, timeout_ms: u64) -> Self {
        Self {
            me,
            listen,
            bootstrap,
            interval_ms,
            timeout_ms,
            did: None,
            live: BTreeMap::new(),
            dids: BTreeMap::new(),
            candidates: BTreeSet::new(),
            next_tick: 0,
        }
    }

    /// DID advertised in this node's announces.
    pub fn set_did(&mut self, did: Option<String>) {
        self.did = did;
    }

    pub fn interval_ms(&self) -> u64 {
        self.interval_ms
    }

    /// Body of this node's announce.
    pub fn announce_body(&self, now: u64) -> Vec<u8> {
        let peers = self
            .live_peers(now)
            .into_iter()
            .take(MAX_GOSSIP)
            .map(|p| GossipEntry { key: p.key, addr: p.addr })
            .collect();
        let a = Announce {
            kind: "announce".into(),
            listen: self.listen,
            did: self.did.clone(),
            peers,
        };
        serde_json::to_vec(&a).expect("serializable")
    }

    /// Addresses to announce to when a tick is due, else empty.
    pub fn tick(&mut self, now: u64) -> Vec<SocketAddr> {
        if now < self.next_tick {
            return Vec::new();
        }
        self.next_tick = now + self.interval_ms;
        self.expire(now);
        let mut targets: BTreeSet<SocketAddr> = self.bootstrap.iter().copied().collect();
        targets.extend(self.live.values().map(|(a, _)| *a));
        targets.extend(std::mem::take(&mut self.candidates));
        targets.remove(&self.listen);
        targets.into_iter().collect()
    }

    /// Records an announce. `from` is the datagram source address, which
    /// wins over the claimed listen address.
    pub fn on_announce(&mut self, from: SocketAddr, key: &VerifyingKey, body: &[u8], now: u64) -> bool {
        if *key == self.me {
            return false;
        }
        let Ok(a) = serde_json::from_slice::<Announce>(body) else {
            return false;
        };
        if a.kind != "announce" {
            return false;
        }
        let fresh = !self.live.contains_key(&key.to_bytes());
        self.live.insert(key.to_bytes(), (from, now));
        match a.did {
            Some(did) => self.dids.insert(key.to_bytes(), did),
            None => self.dids.remove(&key.to_bytes()),
        };
        for g in a.peers {
            let Ok(k) = parse_public_key(&g.key) else { continue };
            if k != self.me && !self.live.contains_key(&k.to_bytes()) && g.addr != self.listen {
                self.candidates.insert(g.addr);
            }
        }
        if fresh {
            // answer promptly so discovery is mutual within one period
            self.candidates.insert(from);
            self.next_tick = self.next_tick.min(now);
        }
        fresh
    }

    fn expire(&mut self, now: u64) {
        let timeout = self.timeout_ms;
        self.live.retain(|_, (_, seen)| now.saturating_sub(*seen) <= timeout);
        let live = &self.live;
        self.dids.retain(|k, _| live.contains_key(k));
    }

    pub fn live_peers(&self, now: u64) -> Vec<PeerInfo> {
        self.live
            .iter()
            .filter(|(_, (_, seen))| now.saturating_sub(*seen) <= self.timeout_ms)
            .filter_map(|(k, (addr, seen))| {
                let key = VerifyingKey::from_bytes(k).ok()?;
                Some(PeerInfo {
                    key: key_hex(&key),
                    fingerprint: Fingerprint::of(&key).to_hex(),
                    addr: *addr,
                    did: self.dids.get(k).cloned(),
                    last_seen_ms: *seen,
                })
            })
            .collect()
    }

    pub fn lookup(&self, key: &VerifyingKey, now: u64) -> Option<SocketAddr> {
        self.live
            .get(&key.to_bytes())
            .filter(|(_, seen)| now.saturating_sub(*seen) <= self.timeout_ms)
            .map(|(a, _)| *a)
    }

    /// Finds a live peer by full key hex, or by a prefix of its key or
    /// fingerprint hex.
    pub fn find(&self, needle: &str, now: u64) -> Vec<PeerInfo> {
        let needle = needle.to_ascii_lowercase();
        self.live_peers(now)
            .into_iter()
            .filter(|p| p.key.starts_with(&needle) || p.fingerprint.starts_with(&needle) || p.addr.to_string() == needle)
            .collect()
    }
}
