use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn payload(len: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen()).collect()
}

#[test]
fn frames_round_trip() {
    let frames = [
        Frame::Data { transfer_id: 7, block: 1, data: vec![1, 2, 3] },
        Frame::Data { transfer_id: u64::MAX, block: 9, data: vec![] },
        Frame::Ack { transfer_id: 7, block: 3 },
        Frame::Abort { transfer_id: 7, code: ABORT_TOO_LARGE },
    ];
    for f in frames {
        assert_eq!(Frame::decode(&f.encode()).unwrap(), f);
    }
    let data = Frame::Data { transfer_id: 0x0102030405060708, block: 0x0a0b0c0d, data: vec![0xff] }.encode();
    assert_eq!(data, [1, 1, 2, 3, 4, 5, 6, 7, 8, 0x0a, 0x0b, 0x0c, 0x0d, 0xff]);
    for bad in [&[][..], &[1, 0, 0], &[2, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 9], &[3, 0, 0, 0, 0, 0, 0, 0, 0], &[9; 20]] {
        assert!(Frame::decode(bad).is_err());
    }
}

#[test]
fn block_count_follows_tftp_rule() {
    let cfg = TransferConfig::default();
    for (len, blocks) in [(0, 1), (1, 1), (1199, 1), (1200, 2), (2400, 3), (220_000, 184)] {
        let (s, _) = Sender::start(1, vec![0; len], cfg, 0).unwrap();
        assert_eq!(s.blocks(), blocks, "len {len}");
    }
}

#[test]
fn lossless_delivery_is_exact() {
    for len in [0, 1, 1200, 5000, 220_000] {
        let data = payload(len, len as u64);
        let out = simulate_link(data.clone(), TransferConfig::default(), 1, || false);
        assert_eq!(out.delivered.as_deref(), Some(&data[..]));
        assert_eq!(out.sender, Ok(()));
        assert_eq!(out.retransmissions, 0);
    }
}

#[test]
fn dead_link_times_out_after_max_retries() {
    let cfg = TransferConfig::default();
    let out = simulate_link(vec![1; 10], cfg, 1, || true);
    assert_eq!(out.sender, Err(TransferError::Timeout));
    assert_eq!(out.retransmissions, u64::from(cfg.max_retries));
    assert_eq!(out.elapsed_ms, cfg.give_up_window_ms());
    assert!(out.delivered.is_none());
}

#[test]
fn backoff_doubles_to_cap() {
    let cfg = TransferConfig::default();
    let (mut s, _) = Sender::start(1, vec![0; 3], cfg, 0).unwrap();
    let mut deadlines = vec![s.deadline()];
    while let SenderEvent::Send(_) = s.poll(s.deadline()) {
        deadlines.push(s.deadline());
    }
    let gaps: Vec<u64> = deadlines.windows(2).map(|w| w[1] - w[0]).collect();
    assert_eq!(&gaps[..4], &[1000, 2000, 4000, 4000]);
    assert_eq!(deadlines.len() as u32, cfg.max_retries + 1);
}

#[test]
fn oversize_rejected_before_any_frame() {
    let cfg = TransferConfig { max_payload: 100, ..TransferConfig::default() };
    assert_eq!(Sender::start(1, vec![0; 101], cfg, 0).unwrap_err(), TransferError::PayloadTooLarge);
    let out = simulate_link(vec![0; 101], cfg, 1, || false);
    assert_eq!(out.frames_sent, 0);
}

#[test]
fn receiver_enforces_cap_and_aborts() {
    let cfg = TransferConfig { max_payload: 1500, ..TransferConfig::default() };
    let mut r = Receiver::new(4, cfg, 0);
    let full = |b| Frame::Data { transfer_id: 4, block: b, data: vec![0; 1200] };
    assert!(matches!(r.on_frame(&full(1), 0), ReceiverEvent::Send(Frame::Ack { block: 1, .. })));
    assert!(matches!(
        r.on_frame(&full(2), 0),
        ReceiverEvent::Failed(TransferError::PayloadTooLarge, Some(Frame::Abort { .. }))
    ));
}

#[test]
fn receiver_reacks_duplicates_and_ignores_gaps() {
    let cfg = TransferConfig::default();
    let mut r = Receiver::new(4, cfg, 0);
    let f = |b, n| Frame::Data { transfer_id: 4, block: b, data: vec![b as u8; n] };
    assert!(matches!(r.on_frame(&f(1, 1200), 0), ReceiverEvent::Send(_)));
    assert_eq!(r.on_frame(&f(1, 1200), 0), ReceiverEvent::Send(Frame::Ack { transfer_id: 4, block: 1 }));
    assert_eq!(r.on_frame(&f(3, 10), 0), ReceiverEvent::Idle);
    let ReceiverEvent::Complete(_, bytes) = r.on_frame(&f(2, 10), 0) else { panic!() };
    assert_eq!(bytes.len(), 1210);
    assert_eq!(r.on_frame(&f(2, 10), 0), ReceiverEvent::Send(Frame::Ack { transfer_id: 4, block: 2 }));
    assert_eq!(r.on_frame(&Frame::Ack { transfer_id: 9, block: 1 }, 0), ReceiverEvent::Idle);
}

#[test]
fn receiver_gives_up_when_sender_goes_quiet() {
    let cfg = TransferConfig::default();
    let mut r = Receiver::new(1, cfg, 0);
    assert_eq!(r.poll(cfg.give_up_window_ms()), ReceiverEvent::Idle);
    assert!(matches!(r.poll(cfg.give_up_window_ms() + 1), ReceiverEvent::Failed(TransferError::Timeout, None)));
}

#[test]
fn ten_percent_loss_delivers() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..30 {
        let data = payload(64_000, i);
        let out = simulate_link(data.clone(), TransferConfig::default(), 2, || rng.gen_bool(0.10));
        assert_eq!(out.delivered.as_deref(), Some(&data[..]));
        assert_eq!(out.sender, Ok(()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_loss_pattern_never_corrupts(len in 0usize..6000, seed in any::<u64>(), loss in 0.0f64..0.5) {
        let data = payload(len, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = simulate_link(data.clone(), TransferConfig::default(), 1, || rng.gen_bool(loss));
        if let Some(got) = &out.delivered {
            prop_assert_eq!(got, &data);
        }
        if out.sender.is_ok() {
            prop_assert!(out.delivered.is_some());
        }
    }
}
