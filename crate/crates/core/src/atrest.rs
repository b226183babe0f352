//! Password-derived at-rest encryption.
//!
//! PBKDF2-HMAC-SHA256 turns the password and a random salt into 64 bytes:
//! an AES-256 key and an HMAC-SHA256 key. A stored key check,
//! `HMAC(mac_key, "datavault key check v1")`, tells a wrong password apart
//! without decrypting anything.
//!
//! Encrypted blob:
//!
//! ```text
//! "DVE1" | iv (16) | AES-256-CTR ciphertext | HMAC-SHA256 tag (32)
//! ```
//!
//! The tag covers the magic, the caller's context string (the file's vault
//! path, so blobs cannot be swapped between files), the IV and the
//! ciphertext.

use alloc::vec::Vec;

use aes::Aes256;
use ctr::cipher::{KeyIvInit, StreamCipher};
use hmac::{Hmac, Mac};
use rand_core::CryptoRngCore;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use zeroize::{Zeroize, ZeroizeOnDrop};

type Aes256Ctr = ctr::Ctr128BE<Aes256>;
type HmacSha256 = Hmac<Sha256>;

pub const DEFAULT_ITERATIONS: u32 = 210_000;
pub const MAGIC: &[u8; 4] = b"DVE1";
const IV_LEN: usize = 16;
const TAG_LEN: usize = 32;
/// Bytes an encrypted blob adds to its plaintext.
pub const BLOB_OVERHEAD: usize = MAGIC.len() + IV_LEN + TAG_LEN;
const KEY_CHECK_LABEL: &[u8] = b"datavault key check v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum AtRestError {
    #[error("wrong password")]
    WrongPassword,
    #[error("ciphertext is not a vault blob")]
    Malformed,
    #[error("ciphertext failed its integrity check")]
    Integrity,
}

#[derive(Clone, ZeroizeOnDrop)]
pub struct VaultKeys {
    enc: [u8; 32],
    mac: [u8; 32],
}

impl core::fmt::Debug for VaultKeys {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str("VaultKeys(..)")
    }
}

impl VaultKeys {
    pub fn derive(password: &[u8], salt: &[u8], iterations: u32) -> Self {
        let mut okm = [0u8; 64];
        pbkdf2::pbkdf2_hmac::<Sha256>(password, salt, iterations, &mut okm);
        let mut keys = Self {
            enc: [0; 32],
            mac: [0; 32],
        };
        keys.enc.copy_from_slice(&okm[..32]);
        keys.mac.copy_from_slice(&okm[32..]);
        okm.zeroize();
        keys
    }

    fn mac(&self) -> HmacSha256 {
        <HmacSha256 as Mac>::new_from_slice(&self.mac).expect("HMAC takes any key length")
    }

    pub fn key_check(&self) -> [u8; 32] {
        let mut m = self.mac();
        m.update(KEY_CHECK_LABEL);
        m.finalize().into_bytes().into()
    }

    fn tag(&self, context: &[u8], iv: &[u8], ct: &[u8]) -> HmacSha256 {
        let mut m = self.mac();
        m.update(MAGIC);
        m.update(&(context.len() as u64).to_be_bytes());
        m.update(context);
        m.update(iv);
        m.update(ct);
        m
    }

    pub fn encrypt(&self, context: &[u8], plaintext: &[u8], rng: &mut impl CryptoRngCore) -> Vec<u8> {
        let mut iv = [0u8; IV_LEN];
        rng.fill_bytes(&mut iv);
        let mut out = Vec::with_capacity(plaintext.len() + BLOB_OVERHEAD);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&iv);
        let start = out.len();
        out.extend_from_slice(plaintext);
        Aes256Ctr::new(&self.enc.into(), &iv.into()).apply_keystream(&mut out[start..]);
        let tag = self.tag(context, &iv, &out[start..]).finalize().into_bytes();
        out.extend_from_slice(&tag);
        out
    }

    /// Checks a blob's tag without decrypting it.
    pub fn check(&self, context: &[u8], blob: &[u8]) -> Result<(), AtRestError> {
        self.checked_parts(context, blob).map(|_| ())
    }

    fn checked_parts<'b>(&self, context: &[u8], blob: &'b [u8]) -> Result<([u8; IV_LEN], &'b [u8]), AtRestError> {
        if blob.len() < BLOB_OVERHEAD || &blob[..4] != MAGIC {
            return Err(AtRestError::Malformed);
        }
        let iv: [u8; IV_LEN] = blob[4..4 + IV_LEN].try_into().expect("16 bytes");
        let (ct, tag) = blob[4 + IV_LEN..].split_at(blob.len() - BLOB_OVERHEAD);
        self.tag(context, &iv, ct)
            .verify_slice(tag)
            .map_err(|_| AtRestError::Integrity)?;
        Ok((iv, ct))
    }

    /// Checks the tag before decrypting.
    pub fn decrypt(&self, context: &[u8], blob: &[u8]) -> Result<Vec<u8>, AtRestError> {
        let (iv, ct) = self.checked_parts(context, blob)?;
        let mut plain = ct.to_vec();
        Aes256Ctr::new(&self.enc.into(), &iv.into()).apply_keystream(&mut plain);
        Ok(plain)
    }
}

/// Stored key-derivation parameters and key check. Holds no secrets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEnvelope {
    pub version: u32,
    #[serde(with = "crate::encoding::b64_bytes")]
    pub salt: Vec<u8>,
    pub iterations: u32,
    #[serde(with = "crate::encoding::hex32")]
    pub key_check: [u8; 32],
}

impl KeyEnvelope {
    pub fn create(password: &[u8], iterations: u32, rng: &mut impl CryptoRngCore) -> (Self, VaultKeys) {
        let mut salt = alloc::vec![0u8; 16];
        rng.fill_bytes(&mut salt);
        let keys = VaultKeys::derive(password, &salt, iterations);
        let env = Self {
            version: 1,
            salt,
            iterations,
            key_check: keys.key_check(),
        };
        (env, keys)
    }

    pub fn unlock(&self, password: &[u8]) -> Result<VaultKeys, AtRestError> {
        let keys = VaultKeys::derive(password, &self.salt, self.iterations);
        let mut m = keys.mac();
        m.update(KEY_CHECK_LABEL);
        m.verify_slice(&self.key_check).map_err(|_| AtRestError::WrongPassword)?;
        Ok(keys)
    }
}
