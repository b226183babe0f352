//! Pairwise access log. Each accessible-files grant produces one block that
//! records the offered paths in a Bloom filter, links to the previous block
//! of both the host's and the requester's personal chains, and is signed by
//! both parties.
//!
//! The block hash is SHA-256 over a fixed binary layout of every field
//! except the two signatures (see [`AccessLogBlock::hash`]); both parties
//! sign that hash.

use alloc::vec::Vec;

use ed25519_dalek::{Signature, SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bloom::{BloomFilter, DEFAULT_SEEDS};
use crate::keys::{self, VerifyCounts};
use crate::path::VaultPath;

const HASH_DOMAIN: &[u8] = b"datavault/logblock/v1\n";
const HOST_DOMAIN: &[u8] = b"datavault/logblock/host\n";
const REQUESTER_DOMAIN: &[u8] = b"datavault/logblock/requester\n";

/// Target false-positive rate used to size each block's filter.
pub const BLOOM_FP_TARGET: f64 = 0.01;

/// Hash and sequence number of the newest block of a personal chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainTip {
    #[serde(with = "crate::encoding::hex32")]
    pub hash: [u8; 32],
    pub seq: u64,
}

impl ChainTip {
    pub const GENESIS: ChainTip = ChainTip {
        hash: [0; 32],
        seq: 0,
    };
}

impl Default for ChainTip {
    fn default() -> Self {
        Self::GENESIS
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessLogBlock {
    #[serde(with = "crate::encoding::hex32")]
    pub host: [u8; 32],
    #[serde(with = "crate::encoding::hex32")]
    pub requester: [u8; 32],
    pub bloom: BloomFilter,
    pub timestamp: u64,
    #[serde(with = "crate::encoding::hex32")]
    pub prev_hash_host: [u8; 32],
    #[serde(with = "crate::encoding::hex32")]
    pub prev_hash_requester: [u8; 32],
    pub seq_host: u64,
    pub seq_requester: u64,
    #[serde(with = "crate::encoding::b64_sig")]
    pub host_signature: Signature,
    #[serde(with = "crate::encoding::b64_sig_opt", default)]
    pub requester_signature: Option<Signature>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Host,
    Requester,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LogError {
    #[error("host signature is invalid")]
    HostSignatureInvalid,
    #[error("block is addressed to a different requester")]
    WrongRequester,
    #[error("block does not extend the requester's current chain tip")]
    StaleTip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakReason {
    NotParticipant,
    BadKey,
    BadBloom,
    HostSignature,
    RequesterSignature,
    PrevHash,
    Sequence,
}

impl core::fmt::Display for BreakReason {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Self::NotParticipant => "block does not involve the chain owner",
            Self::BadKey => "block carries an invalid public key",
            Self::BadBloom => "bloom filter parameters are inconsistent",
            Self::HostSignature => "host signature does not match block contents",
            Self::RequesterSignature => "requester signature does not match block contents",
            Self::PrevHash => "previous-hash link is broken",
            Self::Sequence => "sequence number is not consecutive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("chain broken at block {position}: {reason}")]
pub struct ChainBroken {
    /// Zero-based index into the chain.
    pub position: usize,
    pub reason: BreakReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainReport {
    pub blocks: usize,
    /// Positions of blocks still awaiting the requester's countersignature.
    pub pending: Vec<usize>,
    pub tip: ChainTip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditVerdict {
    pub present: bool,
    /// Chance that `present` is a false positive, from the block's m, k, n.
    pub false_positive_rate: f64,
    pub inserted: u32,
    pub fill_ratio: f64,
}

impl AccessLogBlock {
    /// SHA-256 over: domain tag, host key, requester key, bloom m, k, n
    /// (u32 BE), seeds (u64 BE), bloom byte length (u32 BE) and bytes,
    /// timestamp (u64 BE), both previous hashes, both sequence numbers
    /// (u64 BE).
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(HASH_DOMAIN);
        h.update(self.host);
        h.update(self.requester);
        h.update(self.bloom.m.to_be_bytes());
        h.update(self.bloom.k.to_be_bytes());
        h.update(self.bloom.n.to_be_bytes());
        h.update(self.bloom.seeds.0.to_be_bytes());
        h.update(self.bloom.seeds.1.to_be_bytes());
        h.update((self.bloom.bits.len() as u32).to_be_bytes());
        h.update(&self.bloom.bits);
        h.update(self.timestamp.to_be_bytes());
        h.update(self.prev_hash_host);
        h.update(self.prev_hash_requester);
        h.update(self.seq_host.to_be_bytes());
        h.update(self.seq_requester.to_be_bytes());
        h.finalize().into()
    }

    pub fn role_of(&self, key: &VerifyingKey) -> Option<Role> {
        if self.host == key.to_bytes() {
            Some(Role::Host)
        } else if self.requester == key.to_bytes() {
            Some(Role::Requester)
        } else {
            None
        }
    }

    pub fn is_countersigned(&self) -> bool {
        self.requester_signature.is_some()
    }

    /// The tip of `role`'s chain once this block is appended to it.
    pub fn tip_for(&self, role: Role) -> ChainTip {
        ChainTip {
            hash: self.hash(),
            seq: match role {
                Role::Host => self.seq_host,
                Role::Requester => self.seq_requester,
            },
        }
    }

    fn prev_for(&self, role: Role) -> ChainTip {
        match role {
            Role::Host => ChainTip {
                hash: self.prev_hash_host,
                seq: self.seq_host.wrapping_sub(1),
            },
            Role::Requester => ChainTip {
                hash: self.prev_hash_requester,
                seq: self.seq_requester.wrapping_sub(1),
            },
        }
    }

    pub fn verify_host_signature(&self, counts: &mut VerifyCounts) -> Result<(), BreakReason> {
        let key = VerifyingKey::from_bytes(&self.host).map_err(|_| BreakReason::BadKey)?;
        if keys::verify(&key, HOST_DOMAIN, &self.hash(), &self.host_signature, counts) {
            Ok(())
        } else {
            Err(BreakReason::HostSignature)
        }
    }

    /// `Ok(false)` when the block has not been countersigned yet.
    pub fn verify_requester_signature(&self, counts: &mut VerifyCounts) -> Result<bool, BreakReason> {
        let Some(sig) = &self.requester_signature else {
            return Ok(false);
        };
        let key = VerifyingKey::from_bytes(&self.requester).map_err(|_| BreakReason::BadKey)?;
        if keys::verify(&key, REQUESTER_DOMAIN, &self.hash(), sig, counts) {
            Ok(true)
        } else {
            Err(BreakReason::RequesterSignature)
        }
    }

    /// Membership query for an audit, with the block's false-positive
    /// estimate attached.
    pub fn audit(&self, path: &VaultPath) -> AuditVerdict {
        AuditVerdict {
            present: self.bloom.contains(path.as_str().as_bytes()),
            false_positive_rate: self.bloom.estimated_fp_rate(),
            inserted: self.bloom.n,
            fill_ratio: self.bloom.fill_ratio(),
        }
    }
}

/// Builds and host-signs a block recording `granted` for `requester`.
/// An empty grant still yields a block.
pub fn propose_block(
    host: &SigningKey,
    requester: &VerifyingKey,
    granted: &[VaultPath],
    host_tip: ChainTip,
    requester_tip: ChainTip,
    timestamp: u64,
    seeds: Option<(u64, u64)>,
) -> AccessLogBlock {
    let mut bloom =
        BloomFilter::with_rate(granted.len(), BLOOM_FP_TARGET, seeds.unwrap_or(DEFAULT_SEEDS));
    for path in granted {
        bloom.insert(path.as_str().as_bytes());
    }
    let mut block = AccessLogBlock {
        host: host.verifying_key().to_bytes(),
        requester: requester.to_bytes(),
        bloom,
        timestamp,
        prev_hash_host: host_tip.hash,
        prev_hash_requester: requester_tip.hash,
        seq_host: host_tip.seq + 1,
        seq_requester: requester_tip.seq + 1,
        host_signature: Signature::from_bytes(&[0; 64]),
        requester_signature: None,
    };
    block.host_signature = keys::sign(host, HOST_DOMAIN, &block.hash());
    block
}

/// Adds the requester's signature after checking the host's. Passing
/// `expected_tip` refuses blocks that do not extend the requester's chain.
/// Countersigning an already countersigned block returns it unchanged.
pub fn countersign(
    block: &AccessLogBlock,
    requester: &SigningKey,
    expected_tip: Option<ChainTip>,
) -> Result<AccessLogBlock, LogError> {
    if block.requester != requester.verifying_key().to_bytes() {
        return Err(LogError::WrongRequester);
    }
    let mut counts = VerifyCounts::default();
    block
        .verify_host_signature(&mut counts)
        .map_err(|_| LogError::HostSignatureInvalid)?;
    if let Some(tip) = expected_tip {
        if block.prev_for(Role::Requester) != tip {
            return Err(LogError::StaleTip);
        }
    }
    if block.verify_requester_signature(&mut counts) == Ok(true) {
        return Ok(block.clone());
    }
    let mut signed = block.clone();
    signed.requester_signature = Some(keys::sign(requester, REQUESTER_DOMAIN, &block.hash()));
    Ok(signed)
}

/// Walks `owner`'s personal chain from genesis, checking for each block
/// that the owner participates, that the owner-side previous hash and
/// sequence number extend the prior block, and that both signatures verify.
/// Blocks without a requester signature are reported as pending.
pub fn verify_chain(owner: &VerifyingKey, blocks: &[AccessLogBlock]) -> Result<ChainReport, ChainBroken> {
    let mut tip = ChainTip::GENESIS;
    let mut pending = Vec::new();
    let mut counts = VerifyCounts::default();
    for (position, block) in blocks.iter().enumerate() {
        let broken = |reason| ChainBroken { position, reason };
        let role = block.role_of(owner).ok_or(broken(BreakReason::NotParticipant))?;
        block.bloom.validate().map_err(|_| broken(BreakReason::BadBloom))?;
        let prev = block.prev_for(role);
        if prev.hash != tip.hash {
            return Err(broken(BreakReason::PrevHash));
        }
        if prev.seq != tip.seq {
            return Err(broken(BreakReason::Sequence));
        }
        block.verify_host_signature(&mut counts).map_err(broken)?;
        if !block.verify_requester_signature(&mut counts).map_err(broken)? {
            pending.push(position);
        }
        tip = block.tip_for(role);
    }
    Ok(ChainReport {
        blocks: blocks.len(),
        pending,
        tip,
    })
}

#[cfg(test)]
mod tests;
