use datavault_core::accesslog::{countersign, propose_block, verify_chain, ChainTip, Role};
use datavault_core::credential::{verify_attestation, Attestation, Claim, SelfIdentity, TrustedIssuerList};
use datavault_core::did::did_for_key;
use datavault_core::index::VaultIndex;
use datavault_core::keys::key_hex;
use datavault_core::policy::{parse_expr, AccessMode, Policy};
use datavault_core::token::{mint, verify, TokenError};
use datavault_core::wire::{decode, encode, FileResponse, Message};
use datavault_core::{transit, Fingerprint, Value, VaultPath, VerifyCounts};
use ed25519_dalek::SigningKey;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn p(s: &str) -> VaultPath {
    VaultPath::parse(s).unwrap()
}

fn key(rng: &mut ChaCha8Rng) -> SigningKey {
    SigningKey::from_bytes(&rng.gen())
}

fn identity(did_key: &SigningKey, transport: &SigningKey) -> SelfIdentity {
    let did = did_for_key(&did_key.verifying_key());
    SelfIdentity {
        did_key_id: format!("{did}#key-1"),
        did,
        did_key: did_key.verifying_key(),
        transport_key: transport.verifying_key(),
    }
}

#[test]
fn attestations_to_session_to_logged_fetch() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (host_did, host_tx) = (key(&mut rng), key(&mut rng));
    let req_tx = key(&mut rng);
    let attestor = key(&mut rng);
    let me = identity(&host_did, &host_tx);

    let mut index = VaultIndex::new();
    index.insert_file(&p("public/notes.txt"), 11).unwrap();
    index.insert_file(&p("adults/film.mp4"), 900).unwrap();
    index.insert_file(&p("staff/payroll.csv"), 40).unwrap();
    index.set_policy(&p("adults"), Policy::combined(parse_expr("age gte 18").unwrap())).unwrap();
    index.set_policy(&p("staff"), Policy::combined(parse_expr("role eq \"staff\"").unwrap())).unwrap();

    let holder = Fingerprint::of(&req_tx.verifying_key());
    let att = Attestation::issue(&attestor, Claim { name: "age".into(), value: Value::Int(21) }, holder);
    let mut trusted = TrustedIssuerList::default();
    let mut counts = VerifyCounts::default();
    assert!(verify_attestation(&att, &holder, &trusted, &me, &mut counts).is_err());
    trusted.grant_trust(&key_hex(&attestor.verifying_key()));
    let bag = verify_attestation(&att, &holder, &trusted, &me, &mut counts).unwrap();
    assert_eq!(counts.signatures, 2);
    assert_eq!(counts.registry_lookups, 0);

    let tree = index.accessible_subtree(&[bag], AccessMode::Read, &me.eval_context());
    assert!(tree.contains(&p("public/notes.txt")));
    assert!(tree.contains(&p("adults/film.mp4")));
    assert!(!tree.contains(&p("staff/payroll.csv")));
    assert!(!tree.contains(&p("staff")));

    let token = mint(tree.clone(), holder, 60, 1_000, &host_tx).unwrap();
    let mut counts = VerifyCounts::default();
    let claims = verify(&token, &holder, 1_059, &host_tx.verifying_key(), &mut counts).unwrap();
    assert_eq!(claims.sub_tree, tree);
    assert_eq!(counts.signatures, 1);
    let thief = Fingerprint::of(&key(&mut rng).verifying_key());
    assert_eq!(verify(&token, &thief, 1_001, &host_tx.verifying_key(), &mut counts), Err(TokenError::HolderMismatch));
    assert_eq!(verify(&token, &holder, 1_060, &host_tx.verifying_key(), &mut counts), Err(TokenError::Expired));

    let granted = claims.sub_tree.files().into_iter().map(|(path, _)| path).collect::<Vec<_>>();
    let block = propose_block(&host_tx, &req_tx.verifying_key(), &granted, ChainTip::GENESIS, ChainTip::GENESIS, 1_000, None);
    let block = countersign(&block, &req_tx, Some(ChainTip::GENESIS)).unwrap();
    assert!(block.audit(&p("adults/film.mp4")).present);
    let host_report = verify_chain(&host_tx.verifying_key(), std::slice::from_ref(&block)).unwrap();
    let req_report = verify_chain(&req_tx.verifying_key(), std::slice::from_ref(&block)).unwrap();
    assert_eq!(host_report.tip, block.tip_for(Role::Host));
    assert_eq!(req_report.tip, block.tip_for(Role::Requester));
    assert!(host_report.pending.is_empty());
}

#[test]
fn file_response_survives_encode_seal_open_decode() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (host, req) = (key(&mut rng), key(&mut rng));
    let payload = b"film bytes".repeat(1000);
    let msg = Message::FileResponse(FileResponse {
        request_id: 9,
        path: p("adults/film.mp4"),
        sha256: String::new(),
        payload: payload.clone(),
    });
    let sealed = transit::seal(&host, &req.verifying_key(), &encode(&msg).unwrap(), &mut rng).unwrap();
    let (sender, bytes) = transit::open(&req, &sealed).unwrap();
    assert_eq!(sender, host.verifying_key());
    match decode(&bytes).unwrap() {
        Message::FileResponse(r) => {
            assert_eq!(r.request_id, 9);
            assert_eq!(r.payload, payload);
        }
        other => panic!("unexpected {}", other.name()),
    }
    let outsider = key(&mut rng);
    assert!(transit::open(&outsider, &sealed).is_err());
}

proptest! {
    #[test]
    fn sealed_bytes_open_only_for_the_recipient(body in proptest::collection::vec(any::<u8>(), 0..512), flip in any::<usize>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(body.len() as u64);
        let (a, b) = (key(&mut rng), key(&mut rng));
        let sealed = transit::seal(&a, &b.verifying_key(), &body, &mut rng).unwrap();
        let (sender, opened) = transit::open(&b, &sealed).unwrap();
        prop_assert_eq!(sender, a.verifying_key());
        prop_assert_eq!(&opened, &body);
        let mut bad = sealed.clone();
        let i = flip % bad.len();
        bad[i] ^= 0x01;
        prop_assert!(transit::open(&b, &bad).is_err());
    }
}
