//! State shared by the host and client halves of a node.

use std::sync::{Arc, Mutex, MutexGuard, RwLock, RwLockReadGuard, RwLockWriteGuard};
use std::time::Duration;

use ed25519_dalek::VerifyingKey;

use crate::chains::{ChainExport, ChainStore};
use crate::clock::Clock;
use crate::metrics::Metrics;
use crate::registry::Registry;
use crate::vault::{Vault, VaultError};
use crate::wallet::Wallet;

const CHAIN_SECRET: &str = "accesslog";

pub struct NodeContext {
    pub vault: Arc<Vault>,
    pub wallet: RwLock<Option<Wallet>>,
    pub registry: Arc<dyn Registry>,
    pub clock: Arc<dyn Clock>,
    pub chains: Mutex<ChainStore>,
    pub metrics: Metrics,
    pub transport_key: VerifyingKey,
    pub token_ttl_secs: u64,
    pub request_timeout: Duration,
}

impl std::fmt::Debug for NodeContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NodeContext")
            .field("vault", &self.vault)
            .field("transport_key", &hex::encode(self.transport_key.as_bytes()))
            .finish_non_exhaustive()
    }
}

impl NodeContext {
    pub fn wallet(&self) -> RwLockReadGuard<'_, Option<Wallet>> {
        self.wallet.read().expect("wallet lock poisoned")
    }

    pub fn wallet_mut(&self) -> RwLockWriteGuard<'_, Option<Wallet>> {
        self.wallet.write().expect("wallet lock poisoned")
    }

    pub fn chains(&self) -> MutexGuard<'_, ChainStore> {
        self.chains.lock().expect("chain lock poisoned")
    }

    /// Runs `f` on the unlocked wallet and saves it afterwards.
    pub fn update_wallet<T>(&self, f: impl FnOnce(&mut Wallet) -> T) -> Result<T, VaultError> {
        let mut guard = self.wallet_mut();
        let w = guard.as_mut().ok_or(VaultError::Locked)?;
        let out = f(w);
        w.save(&self.vault)?;
        Ok(out)
    }

    /// Writes the chain into the vault. While locked the chain lives in
    /// memory only and is written on the next successful persist.
    pub fn persist_chain(&self, chain: &ChainStore) {
        let bytes = serde_json::to_vec(&chain.export()).expect("serializable");
        if let Err(e) = self.vault.write_secret(CHAIN_SECRET, &bytes) {
            log::warn!("access log not persisted: {e}");
        }
    }

    pub fn load_chain(vault: &Vault, owner: VerifyingKey) -> Result<ChainStore, VaultError> {
        match vault.read_secret(CHAIN_SECRET)? {
            None => Ok(ChainStore::new(owner)),
            Some(bytes) => {
                let export: ChainExport =
                    serde_json::from_slice(&bytes).map_err(|_| VaultError::Integrity("access log".into()))?;
                ChainStore::import(owner, &export).ok_or_else(|| VaultError::Integrity("access log owner".into()))
            }
        }
    }
}
