//! Policy Administration Point.
//!
//! Owners store policies here; the decision point fetches them in centralized
//! mode; consumers trade an identity token for a capability credential in
//! distributed mode. The PAP also owns the revocation bitstring: one bit per
//! issued, non-expired credential, allocated sequentially, published as a
//! signed wrapper credential at a parameterless GET endpoint.
//!
//! Status lists are organized in generations. When the current list fills up
//! (or everything in it has expired) a new generation starts at a new URL;
//! credentials embed the URL of the generation their bit lives in, and old
//! generations stay served so outstanding credentials remain checkable and
//! revocable.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Body;
use axum::extract::{Path, Query, Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::credential::{
    Bitstring, Capability, CapabilityCredential, CredentialClaims, CredentialStatus,
    IdentityToken, KeyPair, PublicKey, StatusList, TokenVerdict, TrustedIssuers,
};
use crate::policy::Policy;
use crate::wire::{epoch_now, BEARER_PREFIX, HDR_AUTHORIZATION, HDR_OWNER_KEY, HDR_PDP_KEY};
use crate::wire::b64_decode;

pub const DEFAULT_VC_TTL_SECS: u64 = 24 * 3600;
pub const DEFAULT_STATUS_CAPACITY: u64 = 1 << 17;

#[derive(Debug, thiserror::Error)]
pub enum PapError {
    #[error("authentication failed")]
    AuthFailed,
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid identity token: {0}")]
    InvalidToken(String),
    #[error("status list full")]
    ListFull,
    #[error("validation: {0}")]
    Validation(String),
}

impl IntoResponse for PapError {
    fn into_response(self) -> Response {
        let status = match &self {
            PapError::AuthFailed => StatusCode::UNAUTHORIZED,
            PapError::NotFound(_) => StatusCode::NOT_FOUND,
            PapError::InvalidToken(_) => StatusCode::UNAUTHORIZED,
            PapError::ListFull => StatusCode::INSUFFICIENT_STORAGE,
            PapError::Validation(_) => StatusCode::BAD_REQUEST,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Debug, Clone)]
pub struct PapConfig {
    /// PAP identifier, the `issuer` of everything it signs.
    pub id: String,
    /// Public base URL, embedded in credential status-list references.
    pub public_url: String,
    /// Owner name → API key.
    pub owner_keys: BTreeMap<String, String>,
    /// Shared secrets accepted from decision points.
    pub pdp_keys: Vec<String>,
    /// IdPs whose identity tokens are accepted at issuance.
    pub trusted_idps: TrustedIssuers,
    pub vc_ttl_secs: u64,
    pub status_capacity: u64,
    pub snapshot_path: Option<PathBuf>,
}

impl PapConfig {
    pub fn new(id: impl Into<String>, public_url: impl Into<String>) -> Self {
        PapConfig {
            id: id.into(),
            public_url: public_url.into(),
            owner_keys: BTreeMap::new(),
            pdp_keys: Vec::new(),
            trusted_idps: TrustedIssuers::new(),
            vc_ttl_secs: DEFAULT_VC_TTL_SECS,
            status_capacity: DEFAULT_STATUS_CAPACITY,
            snapshot_path: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredPolicy {
    owner: String,
    policy: Policy,
}

/// Where an issued credential's bit lives.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct IssuedVc {
    consumer_id: String,
    subject_key: String,
    generation: u32,
    status_index: u64,
    expires_at: u64,
}

#[derive(Serialize, Deserialize)]
struct PapStore {
    policies: BTreeMap<String, StoredPolicy>,
    next_policy: u64,
    /// Generation → raw bits. The highest generation is the live one.
    #[serde(with = "bits_serde")]
    generations: BTreeMap<u32, Bitstring>,
    next_index: u64,
    issued: Vec<IssuedVc>,
}

mod bits_serde {
    //! Bitstrings persist as `{bit_count, b64(gzip(bits))}` pairs.
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Encoded {
        bit_count: u64,
        encoded: String,
    }

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<u32, Bitstring>,
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        let encoded: BTreeMap<u32, Encoded> = map
            .iter()
            .map(|(gen, bits)| {
                (*gen, Encoded { bit_count: bits.bit_count(), encoded: bits.to_b64() })
            })
            .collect();
        encoded.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> Result<BTreeMap<u32, Bitstring>, D::Error> {
        let encoded = BTreeMap::<u32, Encoded>::deserialize(de)?;
        encoded
            .into_iter()
            .map(|(gen, e)| {
                Bitstring::from_b64(&e.encoded, e.bit_count)
                    .map(|bits| (gen, bits))
                    .map_err(serde::de::Error::custom)
            })
            .collect()
    }
}

impl PapStore {
    fn fresh(capacity: u64) -> Self {
        PapStore {
            policies: BTreeMap::new(),
            next_policy: 0,
            generations: [(0u32, Bitstring::new(capacity))].into(),
            next_index: 0,
            issued: Vec::new(),
        }
    }

    fn live_generation(&self) -> u32 {
        *self.generations.keys().next_back().expect("at least one generation")
    }
}

/// Request log entry; instrumentation for the privacy assertions.
#[derive(Debug, Clone, PartialEq)]
pub struct PapLogEntry {
    pub method: String,
    pub path: String,
    pub query: Option<String>,
}

pub struct Pap {
    cfg: PapConfig,
    key: KeyPair,
    store: RwLock<PapStore>,
    log: Mutex<Vec<PapLogEntry>>,
}

impl Pap {
    pub fn new(cfg: PapConfig, key: KeyPair) -> Arc<Self> {
        let store = cfg
            .snapshot_path
            .as_ref()
            .and_then(|p| std::fs::read(p).ok())
            .and_then(|bytes| serde_json::from_slice(&bytes).ok())
            .unwrap_or_else(|| PapStore::fresh(cfg.status_capacity));
        Arc::new(Pap { cfg, key, store: RwLock::new(store), log: Mutex::new(Vec::new()) })
    }

    pub fn id(&self) -> &str {
        &self.cfg.id
    }

    pub fn public_key(&self) -> PublicKey {
        self.key.public_key()
    }

    /// URL at which the given generation's list is served.
    pub fn status_list_url(&self, generation: u32) -> String {
        format!("{}/status-lists/{generation}", self.cfg.public_url.trim_end_matches('/'))
    }

    fn persist(&self, store: &PapStore) {
        if let Some(path) = &self.cfg.snapshot_path {
            if let Ok(bytes) = serde_json::to_vec_pretty(store) {
                if let Err(e) = std::fs::write(path, bytes) {
                    tracing::warn!("pap snapshot write failed: {e}");
                }
            }
        }
    }

    fn check_owner(&self, key: &str) -> Result<String, PapError> {
        self.cfg
            .owner_keys
            .iter()
            .find(|(_, k)| k.as_str() == key)
            .map(|(owner, _)| owner.clone())
            .ok_or(PapError::AuthFailed)
    }

    fn check_pdp(&self, key: &str) -> bool {
        self.cfg.pdp_keys.iter().any(|k| k == key)
    }

    pub fn put_policy(&self, owner_key: &str, policy: Policy) -> Result<String, PapError> {
        let owner = self.check_owner(owner_key)?;
        let mut store = self.store.write().unwrap();
        store.next_policy += 1;
        let id = format!("{owner}-{}", store.next_policy);
        store.policies.insert(id.clone(), StoredPolicy { owner, policy });
        self.persist(&store);
        Ok(id)
    }

    pub fn delete_policy(&self, owner_key: &str, policy_id: &str) -> Result<(), PapError> {
        let owner = self.check_owner(owner_key)?;
        let mut store = self.store.write().unwrap();
        match store.policies.get(policy_id) {
            Some(stored) if stored.owner == owner => {
                store.policies.remove(policy_id);
                self.persist(&store);
                Ok(())
            }
            Some(_) => Err(PapError::AuthFailed),
            None => Err(PapError::NotFound(policy_id.to_string())),
        }
    }

    /// All stored policies for one consumer, across owners.
    pub fn get_policies(&self, consumer_id: &str) -> Vec<Policy> {
        let store = self.store.read().unwrap();
        store
            .policies
            .values()
            .filter(|sp| sp.policy.consumer_id == consumer_id)
            .map(|sp| sp.policy.clone())
            .collect()
    }

    pub fn list_policies(&self) -> Vec<(String, Policy)> {
        let store = self.store.read().unwrap();
        store.policies.iter().map(|(id, sp)| (id.clone(), sp.policy.clone())).collect()
    }

    /// Issue a capability credential: snapshot of the consumer's current
    /// policies, bound to the supplied subject key, with a freshly allocated
    /// status bit.
    pub fn issue_capability_vc(
        &self,
        token: &IdentityToken,
        subject_public_key: PublicKey,
        now: u64,
    ) -> Result<CapabilityCredential, PapError> {
        let issuer_key = self
            .cfg
            .trusted_idps
            .key_of(&token.issuer)
            .ok_or_else(|| PapError::InvalidToken(format!("unknown idp {:?}", token.issuer)))?;
        match token.verify(issuer_key, now) {
            TokenVerdict::Ok => {}
            verdict => return Err(PapError::InvalidToken(format!("{verdict:?}"))),
        }

        let capabilities: Vec<Capability> = self
            .get_policies(&token.consumer_id)
            .iter()
            .map(Capability::from_policy)
            .collect();

        let mut store = self.store.write().unwrap();
        let generation = self.allocate_ready_generation(&mut store, now)?;
        let status_index = store.next_index;
        store.next_index += 1;

        let expires_at = now + self.cfg.vc_ttl_secs;
        store.issued.push(IssuedVc {
            consumer_id: token.consumer_id.clone(),
            subject_key: subject_public_key.to_b64(),
            generation,
            status_index,
            expires_at,
        });

        let vc = CapabilityCredential::sign(
            CredentialClaims {
                issuer: self.cfg.id.clone(),
                subject_id: token.consumer_id.clone(),
                subject_public_key,
                capabilities,
                issued_at: now,
                expires_at,
                credential_status: CredentialStatus {
                    status_list_url: self.status_list_url(generation),
                    status_index,
                },
            },
            &self.key,
        )
        .map_err(|e| PapError::Validation(e.to_string()))?;
        self.persist(&store);
        Ok(vc)
    }

    /// Rotate to a new generation when the live one is exhausted, or when
    /// every credential in it has already expired.
    fn allocate_ready_generation(&self, store: &mut PapStore, now: u64) -> Result<u32, PapError> {
        if self.cfg.status_capacity == 0 {
            return Err(PapError::ListFull);
        }
        let live = store.live_generation();
        let full = store.next_index >= self.cfg.status_capacity;
        let all_expired = store.next_index > 0
            && store
                .issued
                .iter()
                .filter(|vc| vc.generation == live)
                .all(|vc| vc.expires_at <= now);
        if full || all_expired {
            let next = live + 1;
            store.generations.insert(next, Bitstring::new(self.cfg.status_capacity));
            store.next_index = 0;
            return Ok(next);
        }
        Ok(live)
    }

    /// Set the revocation bit for every unexpired credential issued to
    /// `consumer_id`. Coarse by design: the whole credential dies at once.
    pub fn revoke_consumer(&self, owner_key: &str, consumer_id: &str, now: u64) -> Result<u32, PapError> {
        self.check_owner(owner_key)?;
        let mut store = self.store.write().unwrap();
        let targets: Vec<(u32, u64)> = store
            .issued
            .iter()
            .filter(|vc| vc.consumer_id == consumer_id && vc.expires_at > now)
            .map(|vc| (vc.generation, vc.status_index))
            .collect();
        if targets.is_empty() {
            return Err(PapError::NotFound(format!("no live credential for {consumer_id:?}")));
        }
        let mut flipped = 0;
        for (generation, index) in targets {
            if let Some(bits) = store.generations.get_mut(&generation) {
                bits.set(index).map_err(|e| PapError::Validation(e.to_string()))?;
                flipped += 1;
            }
        }
        self.persist(&store);
        Ok(flipped)
    }

    /// Set one bit directly, addressed by (generation, index).
    pub fn revoke_index(
        &self,
        owner_key: &str,
        generation: u32,
        status_index: u64,
    ) -> Result<(), PapError> {
        self.check_owner(owner_key)?;
        let mut store = self.store.write().unwrap();
        let bits = store
            .generations
            .get_mut(&generation)
            .ok_or_else(|| PapError::NotFound(format!("generation {generation}")))?;
        bits.set(status_index).map_err(|_| {
            PapError::NotFound(format!("index {status_index} in generation {generation}"))
        })?;
        self.persist(&store);
        Ok(())
    }

    /// Signed wrapper over a generation's bits, fresh `issued_at`. The
    /// response never depends on who asks or on any per-credential parameter.
    pub fn publish_status_list(&self, generation: Option<u32>, now: u64) -> Result<StatusList, PapError> {
        let store = self.store.read().unwrap();
        let generation = generation.unwrap_or_else(|| store.live_generation());
        let bits = store
            .generations
            .get(&generation)
            .ok_or_else(|| PapError::NotFound(format!("generation {generation}")))?;
        Ok(StatusList::issue(self.cfg.id.clone(), now, bits, &self.key))
    }

    pub fn live_generation(&self) -> u32 {
        self.store.read().unwrap().live_generation()
    }

    /// (set, total) bits of the live generation.
    pub fn status_summary(&self) -> (u64, u64) {
        let store = self.store.read().unwrap();
        let bits = &store.generations[&store.live_generation()];
        (bits.count_set(), bits.bit_count())
    }

    pub fn request_log(&self) -> Vec<PapLogEntry> {
        self.log.lock().unwrap().clone()
    }

    pub fn clear_request_log(&self) {
        self.log.lock().unwrap().clear();
    }
}

// ---- HTTP layer ------------------------------------------------------------

pub fn router(pap: Arc<Pap>) -> Router {
    Router::new()
        .route("/policies", put(put_policy).get(get_policies))
        .route("/policies/{id}", delete(delete_policy))
        .route("/credentials", post(issue_credential))
        .route("/revocations", post(revoke))
        .route("/status-list", get(current_status_list))
        .route("/status-lists/{generation}", get(status_list_generation))
        .layer(middleware::from_fn_with_state(pap.clone(), request_log_mw))
        .with_state(pap)
}

async fn request_log_mw(
    State(pap): State<Arc<Pap>>,
    req: Request<Body>,
    next: Next,
) -> Response {
    let entry = PapLogEntry {
        method: req.method().to_string(),
        path: req.uri().path().to_string(),
        query: req.uri().query().map(str::to_string),
    };
    pap.log.lock().unwrap().push(entry);
    next.run(req).await
}

fn owner_key(headers: &HeaderMap) -> Result<&str, PapError> {
    headers
        .get(HDR_OWNER_KEY)
        .and_then(|v| v.to_str().ok())
        .ok_or(PapError::AuthFailed)
}

async fn put_policy(
    State(pap): State<Arc<Pap>>,
    headers: HeaderMap,
    Json(policy): Json<Policy>,
) -> Result<Response, PapError> {
    let id = pap.put_policy(owner_key(&headers)?, policy)?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))).into_response())
}

async fn delete_policy(
    State(pap): State<Arc<Pap>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> Result<StatusCode, PapError> {
    pap.delete_policy(owner_key(&headers)?, &id)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct PoliciesQuery {
    consumer_id: String,
}

/// Readable by a PDP (shared secret), an owner, or the consumer itself
/// presenting its identity token.
async fn get_policies(
    State(pap): State<Arc<Pap>>,
    headers: HeaderMap,
    Query(q): Query<PoliciesQuery>,
) -> Result<Json<Vec<Policy>>, PapError> {
    let pdp_ok = headers
        .get(HDR_PDP_KEY)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|k| pap.check_pdp(k));
    let owner_ok = headers
        .get(HDR_OWNER_KEY)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|k| pap.check_owner(k).is_ok());
    let consumer_ok = bearer_token(&headers).is_some_and(|token| {
        token.consumer_id == q.consumer_id
            && pap
                .cfg
                .trusted_idps
                .key_of(&token.issuer)
                .is_some_and(|key| token.verify(key, epoch_now()) == TokenVerdict::Ok)
    });
    if !(pdp_ok || owner_ok || consumer_ok) {
        return Err(PapError::AuthFailed);
    }
    Ok(Json(pap.get_policies(&q.consumer_id)))
}

fn bearer_token(headers: &HeaderMap) -> Option<IdentityToken> {
    let raw = headers.get(HDR_AUTHORIZATION)?.to_str().ok()?;
    let b64 = raw.strip_prefix(BEARER_PREFIX)?;
    serde_json::from_slice(&b64_decode(b64).ok()?).ok()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IssuanceRequest {
    pub identity_token: IdentityToken,
    pub subject_public_key: PublicKey,
}

async fn issue_credential(
    State(pap): State<Arc<Pap>>,
    Json(body): Json<IssuanceRequest>,
) -> Result<Json<CapabilityCredential>, PapError> {
    let vc =
        pap.issue_capability_vc(&body.identity_token, body.subject_public_key, epoch_now())?;
    Ok(Json(vc))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RevocationRequest {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consumer_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generation: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status_index: Option<u64>,
}

async fn revoke(
    State(pap): State<Arc<Pap>>,
    headers: HeaderMap,
    Json(body): Json<RevocationRequest>,
) -> Result<Json<serde_json::Value>, PapError> {
    let key = owner_key(&headers)?;
    match (body.consumer_id, body.status_index) {
        (Some(consumer), None) => {
            let flipped = pap.revoke_consumer(key, &consumer, epoch_now())?;
            Ok(Json(json!({ "revoked_bits": flipped })))
        }
        (None, Some(index)) => {
            pap.revoke_index(key, body.generation.unwrap_or_else(|| pap.live_generation()), index)?;
            Ok(Json(json!({ "revoked_bits": 1 })))
        }
        _ => Err(PapError::Validation(
            "exactly one of consumer_id or status_index must be given".into(),
        )),
    }
}

async fn current_status_list(State(pap): State<Arc<Pap>>) -> Result<Json<StatusList>, PapError> {
    Ok(Json(pap.publish_status_list(None, epoch_now())?))
}

async fn status_list_generation(
    State(pap): State<Arc<Pap>>,
    Path(generation): Path<u32>,
) -> Result<Json<StatusList>, PapError> {
    Ok(Json(pap.publish_status_list(Some(generation), epoch_now())?))
}
