//! Wire constants and shared request/response bodies.
//!
//! Everything that crosses a process boundary is defined here so the exact
//! bytes are pinned in one place: header names, the challenge and decision
//! JSON bodies, and the access-request document the enforcement proxy sends
//! to the decision point.

use serde::{Deserialize, Serialize};

use crate::credential::{IdentityToken, Presentation};
use crate::policy::{Operation, ResourceUrl};

/// Carries the identity token in centralized mode: `Authorization: Bearer <b64url(token JSON)>`.
pub const HDR_AUTHORIZATION: &str = "authorization";
/// Bearer scheme prefix inside [`HDR_AUTHORIZATION`].
pub const BEARER_PREFIX: &str = "Bearer ";
/// Carries the verifiable presentation in distributed mode, base64url of the VP JSON.
pub const HDR_PRESENTATION: &str = "x-verifiable-presentation";
/// Owner API key for PAP policy administration.
pub const HDR_OWNER_KEY: &str = "x-owner-key";
/// Shared secret identifying a PDP towards a PAP.
pub const HDR_PDP_KEY: &str = "x-pdp-key";

/// Proxied NGSI-LD prefix enforced by the PEP.
pub const NGSI_PREFIX: &str = "/ngsi-ld/v1";

/// 401 body sent by the PEP when a request carries no proof.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Challenge {
    pub nonce: String,
    pub audience: String,
}

/// Proof material attached to an access request.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProofMaterial {
    IdentityToken { token: IdentityToken },
    Presentation { presentation: Presentation },
}

/// Original request descriptor, kept for auditing and subscription-delete checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RequestDescriptor {
    pub method: String,
    pub path: String,
}

/// Document POSTed by the PEP to the PDP `/decide` endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccessRequest {
    pub proof: ProofMaterial,
    pub operation: Operation,
    pub targets: Vec<ResourceUrl>,
    pub descriptor: RequestDescriptor,
}

/// PDP decision returned to the PEP.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Decision {
    pub decision: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// Present on permitted Subscribe requests; the PEP echoes it back when
    /// registering the broker-assigned subscription id.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grant_id: Option<String>,
}

impl Decision {
    pub fn permit(grant_id: Option<String>) -> Self {
        Decision { decision: "permit".into(), reason: None, grant_id }
    }

    pub fn deny(reason: impl Into<String>) -> Self {
        Decision { decision: "deny".into(), reason: Some(reason.into()), grant_id: None }
    }

    pub fn is_permit(&self) -> bool {
        self.decision == "permit"
    }
}

/// Body of `POST /subscriptions` on the PDP: binds a permitted Subscribe
/// grant to the broker-assigned subscription id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubscriptionRegistration {
    pub grant_id: String,
    pub broker_subscription_id: String,
}

/// Webhook notification body delivered by the broker.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Notification {
    pub subscription_id: String,
    pub entity_id: String,
    pub attr: String,
    pub value: serde_json::Value,
    pub timestamp: u64,
}

/// Seconds since the Unix epoch.
pub fn epoch_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// base64url without padding, the encoding for all binary wire fields.
pub fn b64_encode(bytes: &[u8]) -> String {
    use base64::Engine as _;
    base64::engine::general_purpose::URL_SAFE_NO_PAD.encode(bytes)
}

pub fn b64_decode(s: &str) -> Result<Vec<u8>, base64::DecodeError> {
    use base64::Engine as _;
    base64::engine::general_purpose::URL_SAFE_NO_PAD.decode(s)
}

/// Percent-encode a string for use as a single path segment (RFC 3986,
/// everything but unreserved characters is escaped).
pub fn percent_encode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'.' | b'_' | b'~' => {
                out.push(b as char)
            }
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

/// Inverse of [`percent_encode`]; rejects malformed escapes and non-UTF-8.
pub fn percent_decode(s: &str) -> Option<String> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hi = (*bytes.get(i + 1)? as char).to_digit(16)?;
            let lo = (*bytes.get(i + 2)? as char).to_digit(16)?;
            out.push((hi * 16 + lo) as u8);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

/// 128-bit random nonce, base64url encoded.
pub fn random_nonce() -> String {
    let mut buf = [0u8; 16];
    getrandom::fill(&mut buf).expect("os entropy");
    b64_encode(&buf)
}
