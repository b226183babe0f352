//! This node's personal access-log chain, with a per-peer index.
//!
//! Blocks this node proposes as host are appended immediately, still
//! pending the requester's signature, so later proposals link to them; the
//! countersigned copy replaces the pending one when it arrives (the block
//! hash does not cover signatures, so links stay valid).

use std::collections::HashMap;

use ed25519_dalek::VerifyingKey;
use serde::{Deserialize, Serialize};

use datavault_core::accesslog::{verify_chain, AccessLogBlock, ChainBroken, ChainReport, ChainTip, Role};

/// Portable chain export: the owner's key and its blocks in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainExport {
    pub format: u32,
    pub owner: String,
    pub blocks: Vec<AccessLogBlock>,
}

impl ChainExport {
    pub fn owner_key(&self) -> Option<VerifyingKey> {
        datavault_core::keys::parse_public_key(&self.owner).ok()
    }

    pub fn verify(&self) -> Result<ChainReport, ChainBroken> {
        let Some(owner) = self.owner_key() else {
            return Err(ChainBroken {
                position: 0,
                reason: datavault_core::accesslog::BreakReason::BadKey,
            });
        };
        verify_chain(&owner, &self.blocks)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("block does not involve this node")]
    NotParticipant,
    #[error("block does not extend the chain tip")]
    StaleTip,
    #[error("no pending block with this hash")]
    UnknownBlock,
    #[error("block is not countersigned")]
    NotCountersigned,
}

#[derive(Debug)]
pub struct ChainStore {
    owner: VerifyingKey,
    blocks: Vec<AccessLogBlock>,
    by_hash: HashMap<[u8; 32], usize>,
    by_peer: HashMap<[u8; 32], Vec<usize>>,
}

impl ChainStore {
    pub fn new(owner: VerifyingKey) -> Self {
        Self {
            owner,
            blocks: Vec::new(),
            by_hash: HashMap::new(),
            by_peer: HashMap::new(),
        }
    }

    pub fn owner(&self) -> &VerifyingKey {
        &self.owner
    }

    pub fn blocks(&self) -> &[AccessLogBlock] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip(&self) -> ChainTip {
        match self.blocks.last() {
            None => ChainTip::GENESIS,
            Some(b) => b.tip_for(b.role_of(&self.owner).expect("stored blocks involve the owner")),
        }
    }

    /// Positions of blocks shared with `peer`.
    pub fn with_peer(&self, peer: &VerifyingKey) -> Vec<&AccessLogBlock> {
        self.by_peer
            .get(&peer.to_bytes())
            .map(|ix| ix.iter().map(|&i| &self.blocks[i]).collect())
            .unwrap_or_default()
    }

    pub fn countersigned_count(&self) -> usize {
        self.blocks.iter().filter(|b| b.is_countersigned()).count()
    }

    /// Appends a block that extends this node's tip.
    pub fn append(&mut self, block: AccessLogBlock) -> Result<(), ChainError> {
        let role = block.role_of(&self.owner).ok_or(ChainError::NotParticipant)?;
        let tip = self.tip();
        let (prev, seq) = match role {
            Role::Host => (block.prev_hash_host, block.seq_host),
            Role::Requester => (block.prev_hash_requester, block.seq_requester),
        };
        if prev != tip.hash || seq != tip.seq + 1 {
            return Err(ChainError::StaleTip);
        }
        let other = match role {
            Role::Host => block.requester,
            Role::Requester => block.host,
        };
        let i = self.blocks.len();
        self.by_hash.insert(block.hash(), i);
        self.by_peer.entry(other).or_default().push(i);
        self.blocks.push(block);
        Ok(())
    }

    /// Replaces a pending block with its countersigned copy.
    pub fn complete(&mut self, signed: AccessLogBlock) -> Result<(), ChainError> {
        if !signed.is_countersigned() {
            return Err(ChainError::NotCountersigned);
        }
        let i = *self.by_hash.get(&signed.hash()).ok_or(ChainError::UnknownBlock)?;
        self.blocks[i] = signed;
        Ok(())
    }

    pub fn find(&self, hash: &[u8; 32]) -> Option<&AccessLogBlock> {
        self.by_hash.get(hash).map(|&i| &self.blocks[i])
    }

    pub fn verify(&self) -> Result<ChainReport, ChainBroken> {
        verify_chain(&self.owner, &self.blocks)
    }

    pub fn export(&self) -> ChainExport {
        ChainExport {
            format: 1,
            owner: hex::encode(self.owner.as_bytes()),
            blocks: self.blocks.clone(),
        }
    }

    /// Rebuilds the store from an export of the same owner. Links are not
    /// checked here; call [`ChainStore::verify`].
    pub fn import(owner: VerifyingKey, export: &ChainExport) -> Option<Self> {
        if export.owner_key()? != owner {
            return None;
        }
        let mut s = Self::new(owner);
        for b in &export.blocks {
            let other = match b.role_of(&owner)? {
                Role::Host => b.requester,
                Role::Requester => b.host,
            };
            let i = s.blocks.len();
            s.by_hash.insert(b.hash(), i);
            s.by_peer.entry(other).or_default().push(i);
            s.blocks.push(b.clone());
        }
        Some(s)
    }
}
