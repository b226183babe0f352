//! Canonical JSON and serde adapters for binary fields.

use alloc::string::String;
use alloc::vec::Vec;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use serde::Serialize;

/// Serializes with object keys sorted lexicographically at every level.
///
/// `serde_json` without `preserve_order` backs objects with a `BTreeMap`,
/// so a round trip through `serde_json::Value` yields sorted keys.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let v = serde_json::to_value(value).expect("serializable value");
    serde_json::to_vec(&v).expect("json value always serializes")
}

pub fn b64url(bytes: &[u8]) -> String {
    URL_SAFE_NO_PAD.encode(bytes)
}

pub fn b64url_decode(s: &str) -> Option<Vec<u8>> {
    URL_SAFE_NO_PAD.decode(s).ok()
}

/// Byte vectors as unpadded base64url strings.
pub mod b64_bytes {
    use super::*;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&b64url(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        b64url_decode(&s).ok_or_else(|| D::Error::custom("invalid base64url"))
    }
}

/// Ed25519 public keys as lowercase hex.
pub mod hex_key {
    use ed25519_dalek::VerifyingKey;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    use super::String;

    pub fn serialize<S: Serializer>(key: &VerifyingKey, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(key.as_bytes()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<VerifyingKey, D::Error> {
        let s = String::deserialize(d)?;
        crate::keys::parse_public_key(&s).map_err(|_| D::Error::custom("invalid public key"))
    }
}

/// Ed25519 signatures as base64url.
pub mod b64_sig {
    use ed25519_dalek::Signature;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    use super::{b64url, b64url_decode, String};

    pub fn serialize<S: Serializer>(sig: &Signature, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&b64url(&sig.to_bytes()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Signature, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = b64url_decode(&s).ok_or_else(|| D::Error::custom("invalid base64url"))?;
        Signature::from_slice(&bytes).map_err(|_| D::Error::custom("invalid signature length"))
    }
}

/// Optional Ed25519 signatures as base64url or `null`.
pub mod b64_sig_opt {
    use ed25519_dalek::Signature;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::String;

    pub fn serialize<S: Serializer>(sig: &Option<Signature>, s: S) -> Result<S::Ok, S::Error> {
        sig.map(|sig| super::b64url(&sig.to_bytes())).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Signature>, D::Error> {
        use serde::de::Error as _;
        match Option::<String>::deserialize(d)? {
            None => Ok(None),
            Some(s) => {
                let bytes =
                    super::b64url_decode(&s).ok_or_else(|| D::Error::custom("invalid base64url"))?;
                Signature::from_slice(&bytes)
                    .map(Some)
                    .map_err(|_| D::Error::custom("invalid signature length"))
            }
        }
    }
}

/// 32-byte digests as lowercase hex.
pub mod hex32 {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    use super::String;

    pub fn serialize<S: Serializer>(bytes: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let mut out = [0u8; 32];
        hex::decode_to_slice(&s, &mut out).map_err(|_| D::Error::custom("expected 32 hex bytes"))?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn canonical_json_sorts_nested_keys() {
        let v = json!({"b": 1, "a": {"z": 1, "y": [ {"d": 0, "c": 1} ]}});
        assert_eq!(
            canonical_json(&v),
            br#"{"a":{"y":[{"c":1,"d":0}],"z":1},"b":1}"#.to_vec()
        );
    }
}
