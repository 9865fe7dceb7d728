//! Identity tokens, capability credentials, presentations, and status lists.
//!
//! All signed structures share the same discipline: Ed25519 over the
//! canonical JSON of every field except `signature`, with a per-structure
//! domain tag. Verification never talks to the network; callers inject the
//! current time, the trusted-issuer set, and whatever status lists they hold,
//! and get back a verdict, never an error.

mod keys;
mod status;

pub use keys::{KeyError, KeyPair, PublicKey, Signature};
pub use status::{Bitstring, StatusError, StatusList};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::policy::{Operation, Policy, PolicyError, ResourceUrl};

const IDENTITY_TOKEN_DOMAIN: &str = "capgate/identity-token/v1";
const CREDENTIAL_DOMAIN: &str = "capgate/capability-credential/v1";
const PRESENTATION_DOMAIN: &str = "capgate/presentation/v1";

/// Tolerated clock skew, applied to every timestamp comparison.
pub const CLOCK_SKEW_SECS: u64 = 30;

#[derive(Debug, thiserror::Error)]
pub enum CredentialError {
    #[error("expires_at must be after issued_at")]
    BadValidityWindow,
    #[error("subject key does not match the credential subject")]
    SubjectKeyMismatch,
    #[error("presentation must enclose at least one credential")]
    EmptyPresentation,
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

fn within_validity(issued_at: u64, expires_at: u64, now: u64) -> TimeCheck {
    if now + CLOCK_SKEW_SECS < issued_at {
        TimeCheck::NotYetValid
    } else if now >= expires_at + CLOCK_SKEW_SECS {
        TimeCheck::Expired
    } else {
        TimeCheck::Ok
    }
}

enum TimeCheck {
    Ok,
    Expired,
    NotYetValid,
}

/// Signed proof of a consumer identifier, issued by the IdP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityToken {
    pub consumer_id: String,
    pub issuer: String,
    pub issued_at: u64,
    pub expires_at: u64,
    pub signature: Signature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenVerdict {
    Ok,
    BadSignature,
    Expired,
    NotYetValid,
}

impl IdentityToken {
    pub fn sign(
        consumer_id: impl Into<String>,
        issuer: impl Into<String>,
        issued_at: u64,
        expires_at: u64,
        key: &KeyPair,
    ) -> Result<Self, CredentialError> {
        if expires_at <= issued_at {
            return Err(CredentialError::BadValidityWindow);
        }
        let mut token = IdentityToken {
            consumer_id: consumer_id.into(),
            issuer: issuer.into(),
            issued_at,
            expires_at,
            signature: Signature::placeholder(),
        };
        token.signature = key.sign(&token.signing_bytes());
        Ok(token)
    }

    fn signing_bytes(&self) -> Vec<u8> {
        canonical::signing_bytes(IDENTITY_TOKEN_DOMAIN, self)
    }

    pub fn verify(&self, issuer_key: &PublicKey, now: u64) -> TokenVerdict {
        if !issuer_key.verify(&self.signing_bytes(), &self.signature) {
            return TokenVerdict::BadSignature;
        }
        match within_validity(self.issued_at, self.expires_at, now) {
            TimeCheck::Ok => TokenVerdict::Ok,
            TimeCheck::Expired => TokenVerdict::Expired,
            TimeCheck::NotYetValid => TokenVerdict::NotYetValid,
        }
    }
}

/// One granted capability inside a credential; the consumer is implied by
/// the credential subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capability {
    pub operation: Operation,
    pub resource: ResourceUrl,
}

impl Capability {
    pub fn from_policy(p: &Policy) -> Self {
        Capability { operation: p.operation, resource: p.resource.clone() }
    }

    pub fn to_policy(&self, consumer_id: &str) -> Result<Policy, PolicyError> {
        Policy::new(consumer_id, self.operation, self.resource.clone())
    }
}

/// Pointer from a credential to its bit in the issuer's status list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialStatus {
    pub status_list_url: String,
    pub status_index: u64,
}

/// Capability credential: the issuing PAP asserts that the holder of
/// `subject_public_key` (registered as `subject_id`) holds these capabilities
/// until `expires_at`, revocable through the referenced status list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilityCredential {
    pub issuer: String,
    pub issuer_key_id: String,
    pub subject_id: String,
    pub subject_public_key: PublicKey,
    pub capabilities: Vec<Capability>,
    pub issued_at: u64,
    pub expires_at: u64,
    pub credential_status: CredentialStatus,
    pub signature: Signature,
}

/// Unsigned credential fields handed to [`CapabilityCredential::sign`].
#[derive(Debug, Clone)]
pub struct CredentialClaims {
    pub issuer: String,
    pub subject_id: String,
    pub subject_public_key: PublicKey,
    pub capabilities: Vec<Capability>,
    pub issued_at: u64,
    pub expires_at: u64,
    pub credential_status: CredentialStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CredentialVerdict {
    Ok,
    UntrustedIssuer,
    BadSignature,
    Expired,
    NotYetValid,
    Revoked,
    StatusUnknown,
}

impl CredentialVerdict {
    pub fn reason(&self) -> &'static str {
        match self {
            CredentialVerdict::Ok => "ok",
            CredentialVerdict::UntrustedIssuer => "untrusted_issuer",
            CredentialVerdict::BadSignature => "bad_signature",
            CredentialVerdict::Expired => "expired",
            CredentialVerdict::NotYetValid => "not_yet_valid",
            CredentialVerdict::Revoked => "revoked",
            CredentialVerdict::StatusUnknown => "status_unknown",
        }
    }
}

impl CapabilityCredential {
    pub fn sign(claims: CredentialClaims, pap_key: &KeyPair) -> Result<Self, CredentialError> {
        if claims.expires_at <= claims.issued_at {
            return Err(CredentialError::BadValidityWindow);
        }
        let mut vc = CapabilityCredential {
            issuer: claims.issuer,
            issuer_key_id: pap_key.key_id().to_string(),
            subject_id: claims.subject_id,
            subject_public_key: claims.subject_public_key,
            capabilities: claims.capabilities,
            issued_at: claims.issued_at,
            expires_at: claims.expires_at,
            credential_status: claims.credential_status,
            signature: Signature::placeholder(),
        };
        vc.signature = pap_key.sign(&vc.signing_bytes());
        Ok(vc)
    }

    fn signing_bytes(&self) -> Vec<u8> {
        canonical::signing_bytes(CREDENTIAL_DOMAIN, self)
    }

    /// Check issuer trust, signature, validity window, and revocation bit, in
    /// that order; the first failure wins. A missing list means the status
    /// cannot be determined and the caller decides what to do with
    /// [`CredentialVerdict::StatusUnknown`].
    pub fn verify(
        &self,
        trusted_paps: &TrustedIssuers,
        now: u64,
        list: Option<&StatusList>,
    ) -> CredentialVerdict {
        let Some(issuer_key) = trusted_paps.key_of(&self.issuer) else {
            return CredentialVerdict::UntrustedIssuer;
        };
        if !issuer_key.verify(&self.signing_bytes(), &self.signature) {
            return CredentialVerdict::BadSignature;
        }
        match within_validity(self.issued_at, self.expires_at, now) {
            TimeCheck::Expired => return CredentialVerdict::Expired,
            TimeCheck::NotYetValid => return CredentialVerdict::NotYetValid,
            TimeCheck::Ok => {}
        }
        let Some(list) = list else {
            return CredentialVerdict::StatusUnknown;
        };
        // a list for a different issuer, or one too short for our index, is
        // not authoritative for this credential
        if list.issuer != self.issuer {
            return CredentialVerdict::StatusUnknown;
        }
        match list.is_revoked(self.credential_status.status_index) {
            Some(true) => CredentialVerdict::Revoked,
            Some(false) => CredentialVerdict::Ok,
            None => CredentialVerdict::StatusUnknown,
        }
    }

    /// Policies conveyed by this credential, bound to its subject.
    pub fn policies(&self) -> Vec<Policy> {
        self.capabilities
            .iter()
            .filter_map(|c| c.to_policy(&self.subject_id).ok())
            .collect()
    }
}

/// Subject-signed wrapper over credentials, binding a nonce and the audience
/// it was created for. Verifiable with nothing but the enclosed material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Presentation {
    pub credentials: Vec<CapabilityCredential>,
    pub nonce: String,
    pub audience: String,
    pub created_at: u64,
    pub signature: Signature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresentationVerdict {
    Ok,
    BadProof,
    WrongNonce,
    WrongAudience,
    VcFailure(CredentialVerdict),
}

impl PresentationVerdict {
    pub fn reason(&self) -> &'static str {
        match self {
            PresentationVerdict::Ok => "ok",
            PresentationVerdict::BadProof => "bad_proof",
            PresentationVerdict::WrongNonce => "wrong_nonce",
            PresentationVerdict::WrongAudience => "wrong_audience",
            PresentationVerdict::VcFailure(inner) => inner.reason(),
        }
    }
}

impl Presentation {
    /// Wrap credentials and sign with the subject key, which must match the
    /// subject of every enclosed credential.
    pub fn create(
        credentials: Vec<CapabilityCredential>,
        nonce: impl Into<String>,
        audience: impl Into<String>,
        created_at: u64,
        subject_key: &KeyPair,
    ) -> Result<Self, CredentialError> {
        if credentials.is_empty() {
            return Err(CredentialError::EmptyPresentation);
        }
        let public = subject_key.public_key();
        if credentials.iter().any(|vc| vc.subject_public_key != public) {
            return Err(CredentialError::SubjectKeyMismatch);
        }
        let mut vp = Presentation {
            credentials,
            nonce: nonce.into(),
            audience: audience.into(),
            created_at,
            signature: Signature::placeholder(),
        };
        vp.signature = subject_key.sign(&vp.signing_bytes());
        Ok(vp)
    }

    fn signing_bytes(&self) -> Vec<u8> {
        canonical::signing_bytes(PRESENTATION_DOMAIN, self)
    }

    pub fn subject_public_key(&self) -> Option<&PublicKey> {
        self.credentials.first().map(|vc| &vc.subject_public_key)
    }

    /// Verify proof, nonce, audience, then every enclosed credential, in that
    /// order; the first failure wins. Requires no network interaction.
    pub fn verify(
        &self,
        expected_nonce: &str,
        expected_audience: &str,
        trusted_paps: &TrustedIssuers,
        now: u64,
        lists: &dyn StatusListSource,
    ) -> PresentationVerdict {
        let Some(subject_key) = self.subject_public_key() else {
            return PresentationVerdict::BadProof;
        };
        if self.credentials.iter().any(|vc| vc.subject_public_key != *subject_key) {
            return PresentationVerdict::BadProof;
        }
        if !subject_key.verify(&self.signing_bytes(), &self.signature) {
            return PresentationVerdict::BadProof;
        }
        if self.nonce != expected_nonce {
            return PresentationVerdict::WrongNonce;
        }
        if self.audience != expected_audience {
            return PresentationVerdict::WrongAudience;
        }
        for vc in &self.credentials {
            let list = lists.list_for(&vc.issuer, &vc.credential_status.status_list_url);
            match vc.verify(trusted_paps, now, list) {
                CredentialVerdict::Ok => {}
                failure => return PresentationVerdict::VcFailure(failure),
            }
        }
        PresentationVerdict::Ok
    }

    /// Union of policies over all enclosed credentials.
    pub fn policies(&self) -> Vec<Policy> {
        self.credentials.iter().flat_map(|vc| vc.policies()).collect()
    }
}

/// Trusted issuer registry: identifier → verification key.
#[derive(Debug, Clone, Default)]
pub struct TrustedIssuers {
    keys: BTreeMap<String, PublicKey>,
}

impl TrustedIssuers {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, id: impl Into<String>, key: PublicKey) -> Self {
        self.keys.insert(id.into(), key);
        self
    }

    pub fn insert(&mut self, id: impl Into<String>, key: PublicKey) {
        self.keys.insert(id.into(), key);
    }

    pub fn key_of(&self, id: &str) -> Option<&PublicKey> {
        self.keys.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.keys.keys().map(String::as_str)
    }
}

/// Where a verifier finds the status list for a credential. Implementations
/// may key by issuer alone or by the exact list URL.
pub trait StatusListSource {
    fn list_for(&self, issuer: &str, status_list_url: &str) -> Option<&StatusList>;
}

/// Issuer-keyed map, enough when each PAP has one live list.
impl StatusListSource for BTreeMap<String, StatusList> {
    fn list_for(&self, issuer: &str, _status_list_url: &str) -> Option<&StatusList> {
        self.get(issuer)
    }
}

/// Empty source: every status check comes back unknown.
pub struct NoStatusLists;

impl StatusListSource for NoStatusLists {
    fn list_for(&self, _issuer: &str, _status_list_url: &str) -> Option<&StatusList> {
        None
    }
}
