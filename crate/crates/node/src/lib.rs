//! A peer-to-peer personal data-vault node.

pub mod admin;
pub mod bench;
pub mod chains;
pub mod cli;
pub mod client;
pub mod clock;
pub mod config;
pub mod context;
pub mod discovery;
pub mod endpoint;
pub mod host;
pub mod metrics;
pub mod node;
pub mod registry;
pub mod transport;
pub mod vault;
pub mod wallet;
