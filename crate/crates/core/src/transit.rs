//! Datagram envelopes.
//!
//! Sealed (every protocol datagram):
//!
//! ```text
//! 0x01 | sender Ed25519 key (32) | ephemeral X25519 key (32) | nonce (12)
//!      | ChaCha20-Poly1305 ciphertext | Ed25519 signature (64)
//! ```
//!
//! The AEAD key is HKDF-SHA256 over X25519(ephemeral, recipient), where the
//! recipient's X25519 key is the Montgomery form of its Ed25519 transport
//! key; salt is `ephemeral || recipient`. The header is the AEAD associated
//! data. The sender signs everything before the signature plus the
//! recipient key.
//!
//! Signed (peer announcements, which are public):
//!
//! ```text
//! 0x02 | sender Ed25519 key (32) | body | Ed25519 signature (64)
//! ```

use alloc::vec::Vec;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::ChaCha20Poly1305;
use ed25519_dalek::{Signature, SigningKey, VerifyingKey};
use hkdf::Hkdf;
use rand_core::CryptoRngCore;
use sha2::Sha256;
use x25519_dalek::{PublicKey, StaticSecret};
use zeroize::Zeroize;

use crate::keys::{self, VerifyCounts};

pub const KIND_SEALED: u8 = 0x01;
pub const KIND_SIGNED: u8 = 0x02;

const SEALED_HEADER_LEN: usize = 1 + 32 + 32 + 12;
const SIG_LEN: usize = 64;
const TAG_LEN: usize = 16;
/// Bytes a sealed envelope adds to its plaintext.
pub const SEALED_OVERHEAD: usize = SEALED_HEADER_LEN + TAG_LEN + SIG_LEN;

const SEAL_DOMAIN: &[u8] = b"datavault/transit/sealed\n";
const SIGNED_DOMAIN: &[u8] = b"datavault/transit/signed\n";
const HKDF_INFO: &[u8] = b"datavault transit v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum TransitError {
    #[error("envelope is truncated or of unknown kind")]
    Malformed,
    #[error("sender key is invalid")]
    BadSenderKey,
    #[error("sender signature does not verify")]
    BadSignature,
    #[error("key agreement produced a degenerate secret")]
    WeakKey,
    #[error("decryption failed")]
    Decrypt,
}

fn x25519_public(key: &VerifyingKey) -> PublicKey {
    PublicKey::from(key.to_montgomery().to_bytes())
}

fn aead_key(shared: &[u8; 32], eph: &[u8; 32], recipient: &VerifyingKey) -> ChaCha20Poly1305 {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(eph);
    salt[32..].copy_from_slice(recipient.as_bytes());
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut okm = [0u8; 32];
    hk.expand(HKDF_INFO, &mut okm).expect("32 bytes is a valid HKDF length");
    let cipher = ChaCha20Poly1305::new(&okm.into());
    okm.zeroize();
    cipher
}

fn signed_message(bytes: &[u8], recipient: &VerifyingKey) -> Vec<u8> {
    let mut m = Vec::with_capacity(bytes.len() + 32);
    m.extend_from_slice(bytes);
    m.extend_from_slice(recipient.as_bytes());
    m
}

pub fn seal(
    sender: &SigningKey,
    recipient: &VerifyingKey,
    plaintext: &[u8],
    rng: &mut impl CryptoRngCore,
) -> Result<Vec<u8>, TransitError> {
    let mut eph_bytes = [0u8; 32];
    rng.fill_bytes(&mut eph_bytes);
    let eph = StaticSecret::from(eph_bytes);
    eph_bytes.zeroize();
    let eph_pub = PublicKey::from(&eph);
    let shared = eph.diffie_hellman(&x25519_public(recipient));
    if !shared.was_contributory() {
        return Err(TransitError::WeakKey);
    }
    let mut nonce = [0u8; 12];
    rng.fill_bytes(&mut nonce);

    let mut out = Vec::with_capacity(plaintext.len() + SEALED_OVERHEAD);
    out.push(KIND_SEALED);
    out.extend_from_slice(sender.verifying_key().as_bytes());
    out.extend_from_slice(eph_pub.as_bytes());
    out.extend_from_slice(&nonce);
    let cipher = aead_key(shared.as_bytes(), eph_pub.as_bytes(), recipient);
    let ct = cipher
        .encrypt(&nonce.into(), Payload { msg: plaintext, aad: &out })
        .map_err(|_| TransitError::Decrypt)?;
    out.extend_from_slice(&ct);
    let sig = keys::sign(sender, SEAL_DOMAIN, &signed_message(&out, recipient));
    out.extend_from_slice(&sig.to_bytes());
    Ok(out)
}

fn sender_key(bytes: &[u8]) -> Result<VerifyingKey, TransitError> {
    let raw: [u8; 32] = bytes[1..33].try_into().map_err(|_| TransitError::Malformed)?;
    VerifyingKey::from_bytes(&raw).map_err(|_| TransitError::BadSenderKey)
}

fn split_sig(bytes: &[u8]) -> (&[u8], Signature) {
    let (body, sig) = bytes.split_at(bytes.len() - SIG_LEN);
    (body, Signature::from_slice(sig).expect("64 bytes"))
}

/// Verifies the sender signature, then decrypts. Returns the sender's
/// transport key and the plaintext.
pub fn open(recipient: &SigningKey, bytes: &[u8]) -> Result<(VerifyingKey, Vec<u8>), TransitError> {
    if bytes.len() < SEALED_OVERHEAD || bytes[0] != KIND_SEALED {
        return Err(TransitError::Malformed);
    }
    let sender = sender_key(bytes)?;
    let recipient_pub = recipient.verifying_key();
    let (body, sig) = split_sig(bytes);
    let mut counts = VerifyCounts::default();
    if !keys::verify(&sender, SEAL_DOMAIN, &signed_message(body, &recipient_pub), &sig, &mut counts) {
        return Err(TransitError::BadSignature);
    }
    let (header, ct) = body.split_at(SEALED_HEADER_LEN);
    let eph: [u8; 32] = header[33..65].try_into().expect("32 bytes");
    let nonce: [u8; 12] = header[65..77].try_into().expect("12 bytes");
    let mut scalar = recipient.to_scalar_bytes();
    let secret = StaticSecret::from(scalar);
    scalar.zeroize();
    let shared = secret.diffie_hellman(&PublicKey::from(eph));
    if !shared.was_contributory() {
        return Err(TransitError::WeakKey);
    }
    let cipher = aead_key(shared.as_bytes(), &eph, &recipient_pub);
    let plain = cipher
        .decrypt(&nonce.into(), Payload { msg: ct, aad: header })
        .map_err(|_| TransitError::Decrypt)?;
    Ok((sender, plain))
}

pub fn sign_public(sender: &SigningKey, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(1 + 32 + body.len() + SIG_LEN);
    out.push(KIND_SIGNED);
    out.extend_from_slice(sender.verifying_key().as_bytes());
    out.extend_from_slice(body);
    let sig = keys::sign(sender, SIGNED_DOMAIN, &out);
    out.extend_from_slice(&sig.to_bytes());
    out
}

pub fn open_public(bytes: &[u8]) -> Result<(VerifyingKey, Vec<u8>), TransitError> {
    if bytes.len() < 1 + 32 + SIG_LEN || bytes[0] != KIND_SIGNED {
        return Err(TransitError::Malformed);
    }
    let sender = sender_key(bytes)?;
    let (signed, sig) = split_sig(bytes);
    let mut counts = VerifyCounts::default();
    if !keys::verify(&sender, SIGNED_DOMAIN, signed, &sig, &mut counts) {
        return Err(TransitError::BadSignature);
    }
    Ok((sender, signed[33..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn keys() -> (SigningKey, SigningKey) {
        (SigningKey::from_bytes(&[1; 32]), SigningKey::from_bytes(&[2; 32]))
    }

    #[test]
    fn seal_open_round_trip() {
        let (a, b) = keys();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let msg = b"hello vault".to_vec();
        let env = seal(&a, &b.verifying_key(), &msg, &mut rng).unwrap();
        assert_eq!(env.len(), msg.len() + SEALED_OVERHEAD);
        let (from, plain) = open(&b, &env).unwrap();
        assert_eq!(from, a.verifying_key());
        assert_eq!(plain, msg);
        assert!(!env.windows(msg.len()).any(|w| w == &msg[..]));
    }

    #[test]
    fn wrong_recipient_cannot_open() {
        let (a, b) = keys();
        let c = SigningKey::from_bytes(&[3; 32]);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let env = seal(&a, &b.verifying_key(), b"x", &mut rng).unwrap();
        assert_eq!(open(&c, &env), Err(TransitError::BadSignature));
    }

    #[test]
    fn public_envelopes() {
        let (a, _) = keys();
        let env = sign_public(&a, b"announce");
        assert_eq!(open_public(&env).unwrap(), (a.verifying_key(), b"announce".to_vec()));
        let mut bad = env.clone();
        bad[35] ^= 1;
        assert_eq!(open_public(&bad), Err(TransitError::BadSignature));
        assert_eq!(open_public(&[2; 10]), Err(TransitError::Malformed));
        assert!(open(&a, &env).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn any_byte_flip_is_rejected(len in 0usize..200, idx in any::<prop::sample::Index>(), xor in 1u8..=255) {
            let (a, b) = keys();
            let mut rng = ChaCha20Rng::seed_from_u64(len as u64);
            let env = seal(&a, &b.verifying_key(), &vec![7u8; len], &mut rng).unwrap();
            let mut bad = env.clone();
            let i = idx.index(bad.len());
            bad[i] ^= xor;
            prop_assert!(open(&b, &bad).is_err());
        }

        #[test]
        fn garbage_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..300)) {
            let (_, b) = keys();
            let _ = open(&b, &bytes);
            let _ = open_public(&bytes);
        }
    }
}
