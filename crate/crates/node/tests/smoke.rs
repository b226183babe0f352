mod common;

use std::time::Duration;

use common::*;
use datavault_core::VaultPath;

#[test]
fn two_nodes_fetch_and_log_one_block() {
    let mut net = Net::new();
    let a = net.spawn();
    let b = net.spawn();
    let path = VaultPath::parse("docs/a.txt").unwrap();
    a.vault().put(&path, b"hello vault").unwrap();

    let got = b.client().fetch(&a.as_peer(), &path).unwrap();
    assert_eq!(got.as_slice(), b"hello vault");
    assert!(wait_until(Duration::from_secs(5), || a.ctx().chains().countersigned_count() == 1));
    assert_eq!(b.ctx().chains().len(), 1);
    assert!(a.ctx().chains().verify().is_ok());
    assert!(b.ctx().chains().verify().is_ok());

    let again = b.client().fetch(&a.as_peer(), &path).unwrap();
    assert_eq!(again, got);
    assert_eq!(b.metrics().totals().cache_hits, 1);
}

#[test]
fn nodes_discover_each_other() {
    let mut net = Net::new();
    let a = net.spawn();
    let mut cfg = net.config();
    cfg.bootstrap = vec![a.local_addr()];
    let b = net.spawn_with(cfg);
    assert!(wait_until(Duration::from_secs(5), || a.peers().len() == 1 && b.peers().len() == 1));
    let found = b.resolve_peer(&a.fingerprint()[..10]).unwrap();
    assert_eq!(found, a.as_peer());
    assert_eq!(b.peers()[0].did.as_deref(), Some(did_of(&a).as_str()));
}

#[test]
fn shutdown_leaves_vault_locked() {
    let mut net = Net::new();
    let a = net.spawn();
    assert!(a.is_unlocked());
    a.shutdown();
    assert!(!a.is_unlocked());
    a.shutdown();
}
