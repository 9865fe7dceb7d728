//! Bitstring revocation lists.
//!
//! A status list is one bit per issued, non-expired credential; bit = 1 means
//! revoked. The raw bitstring compresses well while few credentials are
//! revoked, so it travels gzip-compressed and base64url-encoded, wrapped in a
//! credential signed by the issuing PAP. Bit `i` lives in byte `i / 8` at
//! position `i % 8`, least significant bit first.

use std::io::{Read as _, Write as _};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use super::keys::{KeyPair, PublicKey, Signature};
use crate::canonical;
use crate::wire::{b64_decode, b64_encode};

const STATUS_LIST_DOMAIN: &str = "capgate/status-list/v1";

#[derive(Debug, thiserror::Error)]
pub enum StatusError {
    #[error("bit index {index} out of range for list of {bit_count} bits")]
    OutOfRange { index: u64, bit_count: u64 },
    #[error("corrupt compressed payload: {0}")]
    CorruptPayload(String),
    #[error("status list issuance: {0}")]
    Issue(String),
}

/// Raw revocation bits, the PAP-side working form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstring {
    bytes: Vec<u8>,
    bit_count: u64,
}

impl Bitstring {
    /// All-zero list of `bit_count` bits.
    pub fn new(bit_count: u64) -> Self {
        Bitstring { bytes: vec![0u8; bit_count.div_ceil(8) as usize], bit_count }
    }

    pub fn bit_count(&self) -> u64 {
        self.bit_count
    }

    pub fn get(&self, index: u64) -> Result<bool, StatusError> {
        self.check(index)?;
        Ok(self.bytes[(index / 8) as usize] & (1 << (index % 8)) != 0)
    }

    pub fn set(&mut self, index: u64) -> Result<(), StatusError> {
        self.check(index)?;
        self.bytes[(index / 8) as usize] |= 1 << (index % 8);
        Ok(())
    }

    fn check(&self, index: u64) -> Result<(), StatusError> {
        if index >= self.bit_count {
            return Err(StatusError::OutOfRange { index, bit_count: self.bit_count });
        }
        Ok(())
    }

    pub fn count_set(&self) -> u64 {
        self.bytes.iter().map(|b| b.count_ones() as u64).sum()
    }

    pub fn raw_len_bytes(&self) -> u64 {
        self.bytes.len() as u64
    }

    /// gzip-compress the raw bytes.
    pub fn compress(&self) -> Vec<u8> {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&self.bytes).expect("write to Vec");
        enc.finish().expect("finish to Vec")
    }

    /// Inverse of [`Bitstring::compress`]. The decompressed length must match
    /// `bit_count` exactly and unused bits in the last byte must be zero.
    pub fn decompress(payload: &[u8], bit_count: u64) -> Result<Self, StatusError> {
        let expected = bit_count.div_ceil(8) as usize;
        let mut bytes = Vec::with_capacity(expected);
        let mut dec = GzDecoder::new(payload).take(expected as u64 + 1);
        dec.read_to_end(&mut bytes).map_err(|e| StatusError::CorruptPayload(e.to_string()))?;
        if bytes.len() != expected {
            return Err(StatusError::CorruptPayload(format!(
                "expected {expected} bytes, got {}",
                bytes.len()
            )));
        }
        let tail_bits = (bit_count % 8) as u32;
        if tail_bits != 0 {
            let last = bytes[expected - 1];
            if last >> tail_bits != 0 {
                return Err(StatusError::CorruptPayload("set bits past bit_count".into()));
            }
        }
        Ok(Bitstring { bytes, bit_count })
    }

    pub fn to_b64(&self) -> String {
        b64_encode(&self.compress())
    }

    pub fn from_b64(encoded: &str, bit_count: u64) -> Result<Self, StatusError> {
        let payload = b64_decode(encoded).map_err(|e| StatusError::CorruptPayload(e.to_string()))?;
        Self::decompress(&payload, bit_count)
    }
}

/// A published revocation list: the compressed bitstring wrapped in a
/// credential signed by the issuing PAP. Verifiable offline and relayable by
/// third parties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusList {
    pub issuer: String,
    pub issued_at: u64,
    pub bit_count: u64,
    pub encoded_list: String,
    pub signature: Signature,
}

impl StatusList {
    pub fn issue(
        issuer: impl Into<String>,
        issued_at: u64,
        bits: &Bitstring,
        key: &KeyPair,
    ) -> Self {
        let mut list = StatusList {
            issuer: issuer.into(),
            issued_at,
            bit_count: bits.bit_count(),
            encoded_list: bits.to_b64(),
            signature: Signature::placeholder(),
        };
        list.signature = key.sign(&list.signing_bytes());
        list
    }

    fn signing_bytes(&self) -> Vec<u8> {
        canonical::signing_bytes(STATUS_LIST_DOMAIN, self)
    }

    pub fn verify(&self, issuer_key: &PublicKey) -> bool {
        issuer_key.verify(&self.signing_bytes(), &self.signature)
    }

    pub fn decode(&self) -> Result<Bitstring, StatusError> {
        Bitstring::from_b64(&self.encoded_list, self.bit_count)
    }

    /// Whether the bit at `index` is set. Out-of-range or undecodable lists
    /// answer `None`; callers treat that as status-unknown.
    pub fn is_revoked(&self, index: u64) -> Option<bool> {
        self.decode().ok()?.get(index).ok()
    }

    /// Set one bit and re-sign the wrapper, preserving `issued_at` so the
    /// operation is idempotent on content.
    pub fn revoke(&self, index: u64, key: &KeyPair) -> Result<StatusList, StatusError> {
        let mut bits = self.decode()?;
        bits.set(index)?;
        Ok(StatusList::issue(self.issuer.clone(), self.issued_at, &bits, key))
    }
}
