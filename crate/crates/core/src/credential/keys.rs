//! Ed25519 keys and signatures, wrapped for the wire.
//!
//! Public keys and signatures travel as base64url strings. Deserializing a
//! public key validates the curve point, so a parsed key always verifies.

use std::fmt;

use ed25519_dalek::{Signer as _, SigningKey, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::wire::{b64_decode, b64_encode};

#[derive(Debug, thiserror::Error)]
pub enum KeyError {
    #[error("malformed key material: {0}")]
    Malformed(String),
}

/// Ed25519 verification key.
#[derive(Clone, PartialEq, Eq)]
pub struct PublicKey(VerifyingKey);

impl PublicKey {
    pub fn from_b64(s: &str) -> Result<Self, KeyError> {
        let bytes = b64_decode(s).map_err(|e| KeyError::Malformed(e.to_string()))?;
        let arr: [u8; 32] =
            bytes.try_into().map_err(|_| KeyError::Malformed("expected 32 bytes".into()))?;
        let vk = VerifyingKey::from_bytes(&arr).map_err(|e| KeyError::Malformed(e.to_string()))?;
        Ok(PublicKey(vk))
    }

    pub fn to_b64(&self) -> String {
        b64_encode(self.0.as_bytes())
    }

    pub fn verify(&self, message: &[u8], signature: &Signature) -> bool {
        let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
        self.0.verify_strict(message, &sig).is_ok()
    }

    /// Short stable identifier for cache keys and audit lines:
    /// base64url(SHA-256(key bytes)), truncated to 16 characters.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest as _, Sha256};
        let digest = Sha256::digest(self.0.as_bytes());
        let mut s = b64_encode(&digest);
        s.truncate(16);
        s
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_b64())
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_b64())
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_b64())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        PublicKey::from_b64(&s).map_err(serde::de::Error::custom)
    }
}

/// Detached Ed25519 signature.
#[derive(Clone, PartialEq, Eq)]
pub struct Signature([u8; 64]);

impl Signature {
    /// All-zero placeholder used while assembling a structure before signing.
    pub(crate) fn placeholder() -> Self {
        Signature([0u8; 64])
    }

    pub fn from_b64(s: &str) -> Result<Self, KeyError> {
        let bytes = b64_decode(s).map_err(|e| KeyError::Malformed(e.to_string()))?;
        let arr: [u8; 64] =
            bytes.try_into().map_err(|_| KeyError::Malformed("expected 64 bytes".into()))?;
        Ok(Signature(arr))
    }

    pub fn to_b64(&self) -> String {
        b64_encode(&self.0)
    }

    pub fn as_bytes(&self) -> &[u8; 64] {
        &self.0
    }

    /// Copy with one bit flipped; test hook for tamper suites.
    pub fn with_flipped_bit(&self, bit: usize) -> Self {
        let mut copy = self.0;
        copy[(bit / 8) % 64] ^= 1 << (bit % 8);
        Signature(copy)
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", self.to_b64())
    }
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_b64())
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Signature::from_b64(&s).map_err(serde::de::Error::custom)
    }
}

/// Signing key plus its public half and an identifier.
pub struct KeyPair {
    signing: SigningKey,
    key_id: String,
}

impl KeyPair {
    pub fn generate(key_id: impl Into<String>) -> Self {
        let mut seed = [0u8; 32];
        getrandom::fill(&mut seed).expect("os entropy");
        Self::from_seed(seed, key_id)
    }

    pub fn from_seed(seed: [u8; 32], key_id: impl Into<String>) -> Self {
        KeyPair { signing: SigningKey::from_bytes(&seed), key_id: key_id.into() }
    }

    pub fn from_seed_b64(seed: &str, key_id: impl Into<String>) -> Result<Self, KeyError> {
        let bytes = b64_decode(seed).map_err(|e| KeyError::Malformed(e.to_string()))?;
        let arr: [u8; 32] =
            bytes.try_into().map_err(|_| KeyError::Malformed("expected 32-byte seed".into()))?;
        Ok(Self::from_seed(arr, key_id))
    }

    pub fn key_id(&self) -> &str {
        &self.key_id
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key())
    }

    pub fn seed_b64(&self) -> String {
        b64_encode(self.signing.as_bytes())
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.signing.sign(message).to_bytes())
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyPair({}, pub {})", self.key_id, self.public_key())
    }
}
