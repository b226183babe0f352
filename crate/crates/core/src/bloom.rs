//! Bloom filters over vault paths.
//!
//! Index `i` of an element `x` is `(h1(x) + i * h2(x)) mod m`, where `h1` is
//! SipHash-2-4 keyed with `(seed_a, seed_b)` and `h2` is SipHash-2-4 keyed
//! with `(seed_b, seed_a)`, forced odd. The seeds are stored with the filter
//! so any party can recompute the indices.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use siphasher::sip::SipHasher24;

/// Seeds used when the caller has no reason to pick its own.
pub const DEFAULT_SEEDS: (u64, u64) = (0x6461_7461_7661_756c, 0x626c_6f6f_6d30_0001);

/// Fields are public so stored filters can be inspected as-is; a filter
/// whose fields disagree fails [`BloomFilter::validate`] and contains nothing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BloomFilter {
    #[serde(with = "crate::encoding::b64_bytes")]
    pub bits: Vec<u8>,
    pub m: u32,
    pub k: u32,
    /// Number of insertions performed.
    pub n: u32,
    pub seeds: (u64, u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("inconsistent bloom filter parameters")]
pub struct BadBloom;

/// Bit count and hash count for `n` elements at false-positive rate `p`:
/// `m = round(-n ln p / (ln 2)^2)` (at least 8), `k = round(m/n ln 2)`
/// (at least 1). `n = 0` is sized as `n = 1`.
pub fn optimal_parameters(n: usize, p: f64) -> (u32, u32) {
    let n = n.max(1) as f64;
    let ln2 = core::f64::consts::LN_2;
    let m = libm::round(-n * libm::log(p) / (ln2 * ln2)).max(8.0);
    let k = libm::round(m / n * ln2).max(1.0);
    (m as u32, k as u32)
}

/// Analytic false-positive probability `(1 - e^(-kn/m))^k`.
pub fn false_positive_rate(m: u32, k: u32, n: u32) -> f64 {
    let (m, k, n) = (m as f64, k as f64, n as f64);
    libm::pow(1.0 - libm::exp(-k * n / m), k)
}

impl BloomFilter {
    pub fn new(m: u32, k: u32, seeds: (u64, u64)) -> Self {
        let m = m.max(1);
        Self {
            bits: vec![0; (m as usize).div_ceil(8)],
            m,
            k: k.max(1),
            n: 0,
            seeds,
        }
    }

    /// A filter sized for `expected` elements at rate `p`.
    pub fn with_rate(expected: usize, p: f64, seeds: (u64, u64)) -> Self {
        let (m, k) = optimal_parameters(expected, p);
        Self::new(m, k, seeds)
    }

    pub fn validate(&self) -> Result<(), BadBloom> {
        if self.m == 0 || self.k == 0 || self.bits.len() != (self.m as usize).div_ceil(8) {
            return Err(BadBloom);
        }
        Ok(())
    }

    fn indices(&self, item: &[u8]) -> impl Iterator<Item = usize> {
        let (a, b) = self.seeds;
        let h1 = SipHasher24::new_with_keys(a, b).hash(item);
        let h2 = SipHasher24::new_with_keys(b, a).hash(item) | 1;
        let m = u64::from(self.m);
        (0..u64::from(self.k)).map(move |i| (h1.wrapping_add(i.wrapping_mul(h2)) % m) as usize)
    }

    pub fn insert(&mut self, item: &[u8]) {
        for i in self.indices(item).collect::<Vec<_>>() {
            self.bits[i / 8] |= 1 << (i % 8);
        }
        self.n = self.n.saturating_add(1);
    }

    pub fn contains(&self, item: &[u8]) -> bool {
        self.validate().is_ok() && self.indices(item).all(|i| self.bits[i / 8] & (1 << (i % 8)) != 0)
    }

    /// Analytic false-positive rate at the current fill.
    pub fn estimated_fp_rate(&self) -> f64 {
        false_positive_rate(self.m, self.k, self.n)
    }

    /// Share of set bits; an implausibly dense filter hints at over-filling.
    pub fn fill_ratio(&self) -> f64 {
        let set: u32 = self.bits.iter().map(|b| b.count_ones()).sum();
        f64::from(set) / f64::from(self.m)
    }
}
