//! Pure building blocks of a peer-to-peer personal data vault.
//!
//! Everything in this crate is free of IO and runs on `alloc` only: the
//! attribute-based policy engine, credential and session-token verification,
//! the bloom-filter access log, the datagram wire codec, the lock-step
//! transfer state machine and the transit / at-rest encryption envelopes.
//! Clocks, randomness and key resolution are always passed in by the caller.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod accesslog;
pub mod atrest;
pub mod bloom;
pub mod credential;
pub mod did;
pub mod encoding;
pub mod index;
pub mod keys;
pub mod path;
pub mod policy;
pub mod token;
pub mod transfer;
pub mod transit;
pub mod value;
pub mod wire;

pub use keys::{Fingerprint, VerifyCounts};
pub use path::VaultPath;
pub use value::{Date, Value};

/// Largest file the vault stores and the largest payload a transfer carries.
pub const MAX_FILE_SIZE: usize = 250 * 1000 * 1000;
