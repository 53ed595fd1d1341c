//! Canonical encoding and SHA-256 digests.
//!
//! Every signed or hashed byte string in the ledger is produced by
//! [`canonical_encode`]: JSON with lexicographically sorted object keys, no
//! insignificant whitespace, UTF-8, and byte fields rendered as lowercase hex.
//! Decoding is strict about hex case so that a value has exactly one encoding.

use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

/// Encodes any ledger value as canonical JSON bytes.
///
/// Values go through `serde_json::Value`, whose object map is ordered, so
/// field order in the Rust type never leaks into the bytes.
pub fn canonical_encode<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let tree = serde_json::to_value(value).expect("ledger types encode to JSON");
    serde_json::to_vec(&tree).expect("JSON values always serialize")
}

/// Canonical encoding of a value that is already a JSON tree.
pub fn canonical_value_bytes(value: &serde_json::Value) -> Vec<u8> {
    // Re-entering through to_value normalizes any preserve-order maps.
    canonical_encode(value)
}

/// Standard SHA-256.
pub fn sha256_digest(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// A 32-byte SHA-256 digest, hex-encoded in JSON.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, HexError> {
        decode_fixed::<32>(s).map(Digest)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        Digest::from_hex(&s).map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HexError {
    #[error("hex string has odd length {0}")]
    OddLength(usize),
    #[error("invalid character {0:?} at offset {1} (lowercase hex only)")]
    InvalidChar(char, usize),
    #[error("expected {expected} bytes, found {found}")]
    WrongLength { expected: usize, found: usize },
}

/// Decodes lowercase hex, rejecting uppercase digits so encodings stay unique.
pub fn decode_lower_hex(s: &str) -> Result<Vec<u8>, HexError> {
    if !s.len().is_multiple_of(2) {
        return Err(HexError::OddLength(s.len()));
    }
    if let Some((i, c)) = s.char_indices().find(|(_, c)| !matches!(c, '0'..='9' | 'a'..='f')) {
        return Err(HexError::InvalidChar(c, i));
    }
    Ok(hex::decode(s).expect("validated hex"))
}

pub fn decode_fixed<const N: usize>(s: &str) -> Result<[u8; N], HexError> {
    let bytes = decode_lower_hex(s)?;
    <[u8; N]>::try_from(bytes.as_slice()).map_err(|_| HexError::WrongLength { expected: N, found: bytes.len() })
}

/// Serde adapter for `Vec<u8>` fields stored as lowercase hex.
pub mod hex_bytes {
    use super::*;

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        decode_lower_hex(&s).map_err(de::Error::custom)
    }
}

/// Serde adapter for fixed-size byte arrays stored as lowercase hex.
pub mod hex_array {
    use super::*;

    pub fn serialize<S: Serializer, const N: usize>(bytes: &[u8; N], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(d: D) -> Result<[u8; N], D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        decode_fixed::<N>(&s).map_err(de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[derive(Serialize)]
    struct Unsorted {
        zeta: u32,
        alpha: &'static str,
        #[serde(with = "hex_bytes")]
        blob: Vec<u8>,
    }

    #[test]
    fn keys_are_sorted_and_compact() {
        let v = Unsorted { zeta: 1, alpha: "a b", blob: vec![0xAB, 0x01] };
        assert_eq!(canonical_encode(&v), br#"{"alpha":"a b","blob":"ab01","zeta":1}"#.to_vec());
    }

    #[test]
    fn nested_maps_are_sorted() {
        let mut inner = BTreeMap::new();
        inner.insert("b", 2);
        inner.insert("a", 1);
        let v = serde_json::json!({"y": inner, "x": [3, {"q": 1, "p": 0}]});
        assert_eq!(canonical_encode(&v), br#"{"x":[3,{"p":0,"q":1}],"y":{"a":1,"b":2}}"#.to_vec());
    }

    #[test]
    fn sha256_known_vectors() {
        assert_eq!(sha256_digest(b"").to_hex(), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        assert_eq!(sha256_digest(b"abc").to_hex(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn uppercase_hex_is_rejected() {
        assert!(matches!(decode_lower_hex("AB"), Err(HexError::InvalidChar('A', 0))));
        assert!(matches!(decode_lower_hex("abc"), Err(HexError::OddLength(3))));
        assert_eq!(decode_lower_hex("00ff").unwrap(), vec![0, 255]);
        assert!(Digest::from_hex("00").is_err());
    }

    #[test]
    fn digest_round_trips_through_json() {
        let d = sha256_digest(b"x");
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<Digest>(&json).unwrap(), d);
    }
}
