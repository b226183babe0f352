use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;

fn host() -> SigningKey {
    SigningKey::from_bytes(&[21; 32])
}

fn requester() -> SigningKey {
    SigningKey::from_bytes(&[22; 32])
}

fn p(s: &str) -> VaultPath {
    VaultPath::parse(s).unwrap()
}

/// `count` dual-signed blocks between one host and one requester, returned
/// as (host chain, requester chain), which are the same blocks.
fn build_chain(count: usize) -> Vec<AccessLogBlock> {
    let (h, r) = (host(), requester());
    let (mut ht, mut rt) = (ChainTip::GENESIS, ChainTip::GENESIS);
    let mut out = Vec::new();
    for i in 0..count {
        let paths = [p(&alloc::format!("f/{i}")), p("shared")];
        let block = propose_block(&h, &r.verifying_key(), &paths, ht, rt, 1000 + i as u64, None);
        let block = countersign(&block, &r, Some(rt)).unwrap();
        ht = block.tip_for(Role::Host);
        rt = block.tip_for(Role::Requester);
        out.push(block);
    }
    out
}

#[test]
fn proposal_contains_granted_paths() {
    let paths = [p("a"), p("b/c"), p("d/e/f")];
    let b = propose_block(&host(), &requester().verifying_key(), &paths, ChainTip::GENESIS, ChainTip::GENESIS, 5, None);
    for path in &paths {
        assert!(b.audit(path).present);
    }
    assert!(!b.is_countersigned());
    let mut c = VerifyCounts::default();
    assert!(b.verify_host_signature(&mut c).is_ok());

    let empty = propose_block(&host(), &requester().verifying_key(), &[], ChainTip::GENESIS, ChainTip::GENESIS, 5, None);
    assert_eq!(empty.bloom.n, 0);
    assert!(!empty.audit(&p("a")).present);
}

#[test]
fn chain_links_match_walk_oracle() {
    let chain = build_chain(5);
    // oracle: recompute each hash independently and compare links
    for w in chain.windows(2) {
        assert_eq!(w[1].prev_hash_host, w[0].hash());
        assert_eq!(w[1].prev_hash_requester, w[0].hash());
        assert_eq!(w[1].seq_host, w[0].seq_host + 1);
    }
    assert_eq!(chain[0].prev_hash_host, [0; 32]);
    let rep = verify_chain(&host().verifying_key(), &chain).unwrap();
    assert_eq!(rep.blocks, 5);
    assert!(rep.pending.is_empty());
    assert_eq!(rep.tip, ChainTip { hash: chain[4].hash(), seq: 5 });
    assert!(verify_chain(&requester().verifying_key(), &chain).is_ok());
}

#[test]
fn countersign_rules() {
    let r = requester();
    let b = propose_block(&host(), &r.verifying_key(), &[p("x")], ChainTip::GENESIS, ChainTip::GENESIS, 1, None);
    let signed = countersign(&b, &r, None).unwrap();
    assert_eq!(countersign(&signed, &r, None).unwrap(), signed);

    let mut tampered = b.clone();
    tampered.bloom.bits[0] ^= 1;
    assert_eq!(countersign(&tampered, &r, None), Err(LogError::HostSignatureInvalid));
    assert_eq!(countersign(&b, &host(), None), Err(LogError::WrongRequester));
    let other_tip = ChainTip { hash: [1; 32], seq: 3 };
    assert_eq!(countersign(&b, &r, Some(other_tip)), Err(LogError::StaleTip));
}

#[test]
fn pending_blocks_are_reported() {
    let mut chain = build_chain(3);
    chain[2].requester_signature = None;
    let rep = verify_chain(&host().verifying_key(), &chain).unwrap();
    assert_eq!(rep.pending, vec![2]);
}

#[test]
fn reorder_and_drop_are_detected() {
    let chain = build_chain(4);
    let mut swapped = chain.clone();
    swapped.swap(1, 2);
    let err = verify_chain(&host().verifying_key(), &swapped).unwrap_err();
    assert_eq!(err.position, 1);
    let mut dropped = chain.clone();
    dropped.remove(1);
    assert_eq!(verify_chain(&host().verifying_key(), &dropped).unwrap_err().position, 1);
    let stranger = SigningKey::from_bytes(&[99; 32]).verifying_key();
    assert_eq!(
        verify_chain(&stranger, &chain).unwrap_err().reason,
        BreakReason::NotParticipant
    );
}

#[test]
fn bloom_bit_flip_breaks_at_that_block() {
    let mut chain = build_chain(25);
    chain[20].bloom.bits[1] ^= 0x10;
    let err = verify_chain(&host().verifying_key(), &chain).unwrap_err();
    assert_eq!(err, ChainBroken { position: 20, reason: BreakReason::HostSignature });
}

#[test]
fn json_round_trip() {
    let chain = build_chain(2);
    let text = serde_json::to_string(&chain).unwrap();
    let back: Vec<AccessLogBlock> = serde_json::from_str(&text).unwrap();
    assert_eq!(back, chain);
}

/// Applies a mutation to the `byte`-th byte of field `field`; returns false
/// when the index is out of range for that field.
fn mutate(block: &mut AccessLogBlock, field: usize, byte: usize, xor: u8) -> bool {
    fn flip(bytes: &mut [u8], byte: usize, xor: u8) -> bool {
        bytes.get_mut(byte).map(|b| *b ^= xor).is_some()
    }
    fn flip_be<const N: usize>(mut bytes: [u8; N], byte: usize, xor: u8) -> Option<[u8; N]> {
        flip(&mut bytes, byte, xor).then_some(bytes)
    }
    match field {
        0 => flip(&mut block.host, byte, xor),
        1 => flip(&mut block.requester, byte, xor),
        2 => flip(&mut block.bloom.bits, byte, xor),
        3 => flip_be(block.bloom.m.to_be_bytes(), byte, xor).map(|b| block.bloom.m = u32::from_be_bytes(b)).is_some(),
        4 => flip_be(block.bloom.k.to_be_bytes(), byte, xor).map(|b| block.bloom.k = u32::from_be_bytes(b)).is_some(),
        5 => flip_be(block.bloom.n.to_be_bytes(), byte, xor).map(|b| block.bloom.n = u32::from_be_bytes(b)).is_some(),
        6 => flip_be(block.bloom.seeds.0.to_be_bytes(), byte, xor).map(|b| block.bloom.seeds.0 = u64::from_be_bytes(b)).is_some(),
        7 => flip_be(block.bloom.seeds.1.to_be_bytes(), byte, xor).map(|b| block.bloom.seeds.1 = u64::from_be_bytes(b)).is_some(),
        8 => flip_be(block.timestamp.to_be_bytes(), byte, xor).map(|b| block.timestamp = u64::from_be_bytes(b)).is_some(),
        9 => flip(&mut block.prev_hash_host, byte, xor),
        10 => flip(&mut block.prev_hash_requester, byte, xor),
        11 => flip_be(block.seq_host.to_be_bytes(), byte, xor).map(|b| block.seq_host = u64::from_be_bytes(b)).is_some(),
        12 => flip_be(block.seq_requester.to_be_bytes(), byte, xor).map(|b| block.seq_requester = u64::from_be_bytes(b)).is_some(),
        13 => flip_be(block.host_signature.to_bytes(), byte, xor)
            .map(|b| block.host_signature = Signature::from_bytes(&b))
            .is_some(),
        14 => match block.requester_signature {
            Some(sig) => flip_be(sig.to_bytes(), byte, xor)
                .map(|b| block.requester_signature = Some(Signature::from_bytes(&b)))
                .is_some(),
            None => false,
        },
        _ => false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn any_single_byte_mutation_is_detected(block in 0usize..6, field in 0usize..15, byte in 0usize..64, xor in 1u8..=255) {
        let chain = build_chain(6);
        let mut bad = chain.clone();
        prop_assume!(mutate(&mut bad[block], field, byte, xor));
        let on_host = verify_chain(&host().verifying_key(), &bad);
        let on_requester = verify_chain(&requester().verifying_key(), &bad);
        prop_assert!(on_host.is_err() || on_requester.is_err());
    }
}
