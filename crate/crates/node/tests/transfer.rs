mod common;

use common::*;
use datavault_core::transfer::{simulate_link, TransferConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn payload(len: usize, seed: u8) -> Vec<u8> {
    (0..len).map(|i| (i as u8).wrapping_mul(seed)).collect()
}

#[test]
fn virtual_link_delivers_through_ten_percent_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cfg = TransferConfig::default();
    let mut complete = 0;
    let mut retransmissions = 0;
    for n in 0..1000u32 {
        let data = payload(64 * 1024, n as u8 | 1);
        let out = simulate_link(data.clone(), cfg, 20, || rng.gen_bool(0.1));
        if out.sender.is_ok() && out.delivered.as_deref() == Some(data.as_slice()) {
            complete += 1;
        }
        retransmissions += out.retransmissions;
    }
    assert!(complete >= 999, "{complete} of 1000 complete");
    assert!(retransmissions > 0);
}

#[test]
fn virtual_link_gives_up_on_a_dead_link() {
    let cfg = TransferConfig::default();
    let out = simulate_link(payload(5000, 3), cfg, 20, || true);
    assert!(out.sender.is_err());
    assert!(out.delivered.is_none());
    assert_eq!(out.retransmissions, u64::from(cfg.max_retries));
    assert!(out.elapsed_ms >= cfg.give_up_window_ms());
}

#[test]
fn virtual_link_without_loss_sends_one_frame_per_block() {
    let cfg = TransferConfig::default();
    let data = payload(220_000, 5);
    let out = simulate_link(data.clone(), cfg, 1, || false);
    assert_eq!(out.delivered.unwrap(), data);
    assert_eq!(out.retransmissions, 0);
    let blocks = data.len().div_ceil(cfg.block_size) as u64;
    assert!(out.frames_sent >= blocks && out.frames_sent <= 2 * blocks + 2);
}

#[test]
fn endpoints_complete_lossy_transfers() {
    let report = lossy_batch(200, 64 * 1024, 0.1, 8, fast_transfer());
    assert_eq!(report.corrupt, 0);
    assert!(report.acknowledged >= 199, "{report:?}");
    assert!(report.intact >= report.acknowledged, "{report:?}");
    assert!(report.retransmissions > 0);
    assert!(report.dropped_datagrams > 0);
}
