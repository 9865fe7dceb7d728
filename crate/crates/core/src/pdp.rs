//! Policy Decision Point, including the PIP.
//!
//! Decides access requests in two modes. Centralized: verify the identity
//! token, pull the consumer's policies from the configured PAPs, decide.
//! Distributed: verify a presentation offline against cached status lists
//! (fetching a list synchronously only when it is missing or stale), then
//! decide over the capabilities the credential conveys.
//!
//! Beyond deciding, the PDP owns the moving parts that make authorization
//! continuous: the single-use nonce store, the type-inference cache (the
//! PIP), the capability cache, the subscription registry with automatic
//! un-subscription, and the periodic status-list refresh. Everything fails
//! closed: missing information is a deny, never a permit.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::credential::{
    Capability, CapabilityCredential, Presentation, PresentationVerdict, StatusList,
    StatusListSource, TokenVerdict, TrustedIssuers, CLOCK_SKEW_SECS,
};
use crate::policy::{decide, MapOracle, Operation, Policy, ResourceUrl, UrlKind};
use crate::wire::{
    epoch_now, percent_decode, random_nonce, AccessRequest, Challenge, Decision, ProofMaterial,
    RequestDescriptor, SubscriptionRegistration, HDR_PDP_KEY,
};

pub const DEFAULT_NONCE_TTL_SECS: u64 = 120;
pub const DEFAULT_PIP_TTL_SECS: u64 = 10;
pub const DEFAULT_FRESHNESS_WINDOW_SECS: u64 = 300;
pub const DEFAULT_REFRESH_INTERVAL: Duration = Duration::from_secs(60);
pub const DEFAULT_SWEEP_INTERVAL: Duration = Duration::from_secs(30);
const GRANT_TTL_SECS: u64 = 60;

#[derive(Debug, thiserror::Error)]
pub enum PdpError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("validation: {0}")]
    Validation(String),
}

impl IntoResponse for PdpError {
    fn into_response(self) -> Response {
        let status = match &self {
            PdpError::NotFound(_) => StatusCode::NOT_FOUND,
            PdpError::Conflict(_) => StatusCode::CONFLICT,
            PdpError::Validation(_) => StatusCode::BAD_REQUEST,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Debug, Clone)]
pub struct PdpConfig {
    /// Broker base URL, for type inference and un-subscription calls.
    pub broker_url: String,
    /// PAP id → base URL; used for centralized policy queries.
    pub pap_urls: BTreeMap<String, String>,
    pub trusted_paps: TrustedIssuers,
    pub trusted_idps: TrustedIssuers,
    /// The enforcement proxy URL presentations must be bound to.
    pub audience: String,
    /// Shared secret sent to PAPs on policy queries.
    pub pdp_key: String,
    pub nonce_ttl_secs: u64,
    pub pip_ttl_secs: u64,
    pub freshness_window_secs: u64,
    pub refresh_interval: Duration,
    pub sweep_interval: Duration,
}

impl PdpConfig {
    pub fn new(broker_url: impl Into<String>, audience: impl Into<String>) -> Self {
        PdpConfig {
            broker_url: broker_url.into(),
            pap_urls: BTreeMap::new(),
            trusted_paps: TrustedIssuers::new(),
            trusted_idps: TrustedIssuers::new(),
            audience: audience.into(),
            pdp_key: String::new(),
            nonce_ttl_secs: DEFAULT_NONCE_TTL_SECS,
            pip_ttl_secs: DEFAULT_PIP_TTL_SECS,
            freshness_window_secs: DEFAULT_FRESHNESS_WINDOW_SECS,
            refresh_interval: DEFAULT_REFRESH_INTERVAL,
            sweep_interval: DEFAULT_SWEEP_INTERVAL,
        }
    }
}

// ---- nonce store -----------------------------------------------------------

struct NonceEntry {
    audience: String,
    expires_at: u64,
}

/// Single-use nonces for the challenge → presentation dance.
pub struct NonceStore {
    ttl: u64,
    entries: HashMap<String, NonceEntry>,
}

impl NonceStore {
    pub fn new(ttl: u64) -> Self {
        NonceStore { ttl, entries: HashMap::new() }
    }

    pub fn mint(&mut self, audience: &str, now: u64) -> String {
        self.purge(now);
        let nonce = random_nonce();
        self.entries.insert(
            nonce.clone(),
            NonceEntry { audience: audience.to_string(), expires_at: now + self.ttl },
        );
        nonce
    }

    /// Whether the nonce is outstanding (issued, unconsumed, unexpired).
    pub fn peek(&mut self, nonce: &str, now: u64) -> bool {
        self.purge(now);
        self.entries.contains_key(nonce)
    }

    /// Remove and return the audience the nonce was minted for. A consumed,
    /// expired, or never-issued nonce answers `None`.
    pub fn consume(&mut self, nonce: &str, now: u64) -> Option<String> {
        self.purge(now);
        self.entries.remove(nonce).map(|e| e.audience)
    }

    fn purge(&mut self, now: u64) {
        self.entries.retain(|_, e| e.expires_at > now);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

// ---- cached state ----------------------------------------------------------

/// Pointer to the credential that authorized something.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VcRef {
    pub issuer: String,
    pub status_list_url: String,
    pub status_index: u64,
    pub expires_at: u64,
}

impl VcRef {
    fn of(vc: &CapabilityCredential) -> Self {
        VcRef {
            issuer: vc.issuer.clone(),
            status_list_url: vc.credential_status.status_list_url.clone(),
            status_index: vc.credential_status.status_index,
            expires_at: vc.expires_at,
        }
    }
}

/// Verified capabilities held between requests; never used past expiry.
#[derive(Debug, Clone)]
pub struct CachedCapability {
    pub consumer_id: String,
    pub fingerprint: String,
    pub capabilities: Vec<Capability>,
    pub vc_ref: VcRef,
    pub expires_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AuthSource {
    Credential(VcRef),
    Centralized,
}

/// A broker subscription the PDP keeps under continuous evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubscriptionRecord {
    pub broker_subscription_id: String,
    pub consumer_id: String,
    pub filter: ResourceUrl,
    pub source: AuthSource,
    pub created_at: u64,
}

struct CachedList {
    list: Arc<StatusList>,
    fetched_at: u64,
}

struct PendingGrant {
    record: SubscriptionRecord,
    expires_at: u64,
}

/// Counters exposed at `/metrics`; the offline-verification and
/// |P|-requests properties are asserted against these.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PdpMetrics {
    pub status_list_fetch_attempts: u64,
    pub status_list_fetches_by_url: BTreeMap<String, u64>,
    pub status_lists_rejected: u64,
    pub policy_fetches: u64,
    pub permits: u64,
    pub denies: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefreshOutcome {
    pub issuer: String,
    pub url: String,
    pub result: String,
}

pub struct Pdp {
    cfg: PdpConfig,
    http: reqwest::Client,
    nonces: Mutex<NonceStore>,
    pip_cache: Mutex<HashMap<String, (Option<ResourceUrl>, u64)>>,
    lists: RwLock<HashMap<String, CachedList>>,
    capabilities: RwLock<HashMap<String, CachedCapability>>,
    subscriptions: RwLock<BTreeMap<String, SubscriptionRecord>>,
    grants: Mutex<HashMap<String, PendingGrant>>,
    metrics: Mutex<PdpMetrics>,
}

/// Fresh status lists keyed by URL, the view one authorization works with.
struct ListView {
    by_url: HashMap<String, Arc<StatusList>>,
}

impl StatusListSource for ListView {
    fn list_for(&self, issuer: &str, status_list_url: &str) -> Option<&StatusList> {
        self.by_url
            .get(status_list_url)
            .map(|arc| arc.as_ref())
            .filter(|list| list.issuer == issuer)
    }
}

impl Pdp {
    pub fn new(cfg: PdpConfig) -> Arc<Self> {
        let nonces = Mutex::new(NonceStore::new(cfg.nonce_ttl_secs));
        Arc::new(Pdp {
            cfg,
            http: reqwest::Client::new(),
            nonces,
            pip_cache: Mutex::new(HashMap::new()),
            lists: RwLock::new(HashMap::new()),
            capabilities: RwLock::new(HashMap::new()),
            subscriptions: RwLock::new(BTreeMap::new()),
            grants: Mutex::new(HashMap::new()),
            metrics: Mutex::new(PdpMetrics::default()),
        })
    }

    pub fn config(&self) -> &PdpConfig {
        &self.cfg
    }

    pub fn metrics(&self) -> PdpMetrics {
        self.metrics.lock().unwrap().clone()
    }

    pub fn mint_nonce(&self, now: u64) -> Challenge {
        let nonce = self.nonces.lock().unwrap().mint(&self.cfg.audience, now);
        Challenge { nonce, audience: self.cfg.audience.clone() }
    }

    // ---- PIP ----------------------------------------------------------------

    /// Resolve an object's type through the broker, with a short TTL cache.
    /// Anything that goes wrong is `None`, which downstream means deny.
    pub async fn infer_type(&self, object: &ResourceUrl, now: u64) -> Option<ResourceUrl> {
        let key = object.as_str().to_string();
        if let Some((cached, fetched_at)) = self.pip_cache.lock().unwrap().get(&key) {
            if now.saturating_sub(*fetched_at) <= self.cfg.pip_ttl_secs {
                return cached.clone();
            }
        }
        let url = format!(
            "{}/ngsi-ld/v1/entities/{}?attrs=",
            self.cfg.broker_url.trim_end_matches('/'),
            crate::wire::percent_encode(object.as_str())
        );
        let resolved = match self.http.get(&url).send().await {
            Ok(resp) if resp.status().is_success() => resp
                .json::<serde_json::Value>()
                .await
                .ok()
                .and_then(|v| v.get("type").and_then(|t| t.as_str()).map(str::to_string))
                .and_then(|t| ResourceUrl::type_url(t).ok()),
            _ => None,
        };
        self.pip_cache.lock().unwrap().insert(key, (resolved.clone(), now));
        resolved
    }

    /// Pre-resolve every type the decision for `targets` may need, so the
    /// decision itself runs over a consistent snapshot.
    async fn snapshot_oracle(&self, targets: &[ResourceUrl], now: u64) -> MapOracle {
        let mut oracle = MapOracle::new();
        let mut objects = BTreeSet::new();
        for target in targets {
            match target.kind() {
                UrlKind::Object => {
                    objects.insert(target.clone());
                }
                UrlKind::Attribute => {
                    if let Some(parent) = target.attr_parent() {
                        objects.insert(parent);
                    }
                }
                UrlKind::Type => {}
            }
        }
        for object in objects {
            if let Some(type_url) = self.infer_type(&object, now).await {
                oracle.insert(&object, type_url);
            }
        }
        oracle
    }

    // ---- authorize ------------------------------------------------------------

    pub async fn authorize(&self, req: &AccessRequest, now: u64) -> Decision {
        let decision = self.authorize_inner(req, now).await;
        let mut metrics = self.metrics.lock().unwrap();
        if decision.is_permit() {
            metrics.permits += 1;
        } else {
            metrics.denies += 1;
        }
        decision
    }

    async fn authorize_inner(&self, req: &AccessRequest, now: u64) -> Decision {
        if req.targets.is_empty() {
            return Decision::deny("no_targets");
        }
        match &req.proof {
            ProofMaterial::IdentityToken { token } => {
                let Some(key) = self.cfg.trusted_idps.key_of(&token.issuer) else {
                    return Decision::deny("invalid_token");
                };
                if token.verify(key, now) != TokenVerdict::Ok {
                    return Decision::deny("invalid_token");
                }
                let policies = match self.fetch_policies(&token.consumer_id).await {
                    Ok(policies) => policies,
                    Err(_) => return Decision::deny("pap_unreachable"),
                };
                self.decide_targets(&policies, &token.consumer_id, None, req, now).await
            }
            ProofMaterial::Presentation { presentation } => {
                self.authorize_presentation(presentation, req, now).await
            }
        }
    }

    async fn authorize_presentation(
        &self,
        vp: &Presentation,
        req: &AccessRequest,
        now: u64,
    ) -> Decision {
        // An outstanding nonce verifies as itself; anything else is compared
        // against a value that cannot match, so the nonce check inside the
        // presentation verification fails in its proper place in the order.
        let expected_nonce = if self.nonces.lock().unwrap().peek(&vp.nonce, now) {
            vp.nonce.clone()
        } else {
            format!("!consumed:{}", random_nonce())
        };
        let mut verdict = vp.verify(
            &expected_nonce,
            &self.cfg.audience,
            &self.cfg.trusted_paps,
            now,
            &self.list_view(now),
        );
        if verdict == PresentationVerdict::VcFailure(crate::credential::CredentialVerdict::StatusUnknown)
        {
            // missing or stale list: fetch synchronously, then decide
            self.fetch_lists_for(vp, now).await;
            verdict = vp.verify(
                &expected_nonce,
                &self.cfg.audience,
                &self.cfg.trusted_paps,
                now,
                &self.list_view(now),
            );
        }
        if verdict != PresentationVerdict::Ok {
            return Decision::deny(verdict.reason());
        }
        // burn the nonce only for a fully verified presentation, atomically;
        // a concurrent duplicate loses here
        if self.nonces.lock().unwrap().consume(&vp.nonce, now).is_none() {
            return Decision::deny("wrong_nonce");
        }

        let Some(subject_key) = vp.subject_public_key() else {
            return Decision::deny("bad_proof");
        };
        let fingerprint = subject_key.fingerprint();
        let consumer_id = vp.credentials[0].subject_id.clone();
        let policies = vp.policies();

        // remember the verified capabilities until they expire
        {
            let mut cache = self.capabilities.write().unwrap();
            for vc in &vp.credentials {
                let vc_ref = VcRef::of(vc);
                let key = format!(
                    "{fingerprint}/{}/{}",
                    vc_ref.status_list_url, vc_ref.status_index
                );
                cache.insert(
                    key,
                    CachedCapability {
                        consumer_id: consumer_id.clone(),
                        fingerprint: fingerprint.clone(),
                        capabilities: vc.capabilities.clone(),
                        expires_at: vc.expires_at,
                        vc_ref,
                    },
                );
            }
        }

        let source = AuthSource::Credential(VcRef::of(&vp.credentials[0]));
        self.decide_targets(&policies, &consumer_id, Some(source), req, now).await
    }

    /// Common tail: every target must pass, subscription deletes must come
    /// from the creating consumer, permitted subscribes mint a grant.
    async fn decide_targets(
        &self,
        policies: &[Policy],
        consumer_id: &str,
        source: Option<AuthSource>,
        req: &AccessRequest,
        now: u64,
    ) -> Decision {
        if req.operation == Operation::Subscribe && req.descriptor.method == "DELETE" {
            let Some(sub_id) = subscription_delete_id(&req.descriptor) else {
                return Decision::deny("unknown_subscription");
            };
            let subs = self.subscriptions.read().unwrap();
            match subs.get(&sub_id) {
                Some(record) if record.consumer_id == consumer_id => {}
                Some(_) => return Decision::deny("not_subscription_owner"),
                None => return Decision::deny("unknown_subscription"),
            }
        }

        let oracle = self.snapshot_oracle(&req.targets, now).await;
        for target in &req.targets {
            if !decide(policies, consumer_id, req.operation, target, &oracle) {
                return Decision::deny("no_matching_policy");
            }
        }

        let grant_id = if req.operation == Operation::Subscribe && req.descriptor.method == "POST"
        {
            let grant_id = random_nonce();
            self.grants.lock().unwrap().insert(
                grant_id.clone(),
                PendingGrant {
                    record: SubscriptionRecord {
                        broker_subscription_id: String::new(),
                        consumer_id: consumer_id.to_string(),
                        filter: req.targets[0].clone(),
                        source: source.unwrap_or(AuthSource::Centralized),
                        created_at: now,
                    },
                    expires_at: now + GRANT_TTL_SECS,
                },
            );
            Some(grant_id)
        } else {
            None
        };
        Decision::permit(grant_id)
    }

    // ---- PAP interaction -------------------------------------------------------

    /// Union of the consumer's policies across every configured PAP. Any
    /// unreachable PAP fails the whole fetch; the caller denies.
    async fn fetch_policies(&self, consumer_id: &str) -> Result<Vec<Policy>, String> {
        let mut all = Vec::new();
        for (pap_id, base) in &self.cfg.pap_urls {
            self.metrics.lock().unwrap().policy_fetches += 1;
            let url = format!(
                "{}/policies?consumer_id={}",
                base.trim_end_matches('/'),
                crate::wire::percent_encode(consumer_id)
            );
            let resp = self
                .http
                .get(&url)
                .header(HDR_PDP_KEY, &self.cfg.pdp_key)
                .send()
                .await
                .map_err(|e| format!("pap {pap_id}: {e}"))?;
            if !resp.status().is_success() {
                return Err(format!("pap {pap_id}: status {}", resp.status()));
            }
            let mut policies: Vec<Policy> =
                resp.json().await.map_err(|e| format!("pap {pap_id}: {e}"))?;
            all.append(&mut policies);
        }
        Ok(all)
    }

    fn list_view(&self, now: u64) -> ListView {
        let lists = self.lists.read().unwrap();
        let by_url = lists
            .iter()
            .filter(|(_, cached)| {
                now.saturating_sub(cached.fetched_at) <= self.cfg.freshness_window_secs
            })
            .map(|(url, cached)| (url.clone(), cached.list.clone()))
            .collect();
        ListView { by_url }
    }

    /// Fetch and cache one status list. The wrapper must verify under the
    /// trusted key of its claimed issuer and be adequately fresh.
    async fn fetch_status_list(&self, issuer: &str, url: &str, now: u64) -> Result<(), String> {
        {
            let mut metrics = self.metrics.lock().unwrap();
            metrics.status_list_fetch_attempts += 1;
            *metrics.status_list_fetches_by_url.entry(url.to_string()).or_insert(0) += 1;
        }
        let resp = self.http.get(url).send().await.map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("status {}", resp.status()));
        }
        let list: StatusList = resp.json().await.map_err(|e| e.to_string())?;
        self.accept_status_list(issuer, url, list, now)
    }

    /// Admission shared by direct fetches and third-party supplies: trusted
    /// issuer, valid signature, adequately fresh `issued_at`.
    pub fn accept_status_list(
        &self,
        expected_issuer: &str,
        url: &str,
        list: StatusList,
        now: u64,
    ) -> Result<(), String> {
        if list.issuer != expected_issuer {
            self.metrics.lock().unwrap().status_lists_rejected += 1;
            return Err(format!("issuer {:?} does not match {expected_issuer:?}", list.issuer));
        }
        let Some(key) = self.cfg.trusted_paps.key_of(&list.issuer) else {
            self.metrics.lock().unwrap().status_lists_rejected += 1;
            return Err(format!("issuer {:?} is not trusted", list.issuer));
        };
        if !list.verify(key) {
            self.metrics.lock().unwrap().status_lists_rejected += 1;
            return Err("signature verification failed".into());
        }
        if now.saturating_sub(list.issued_at) > self.cfg.freshness_window_secs + CLOCK_SKEW_SECS {
            self.metrics.lock().unwrap().status_lists_rejected += 1;
            return Err("list is not adequately fresh".into());
        }
        self.lists
            .write()
            .unwrap()
            .insert(url.to_string(), CachedList { list: Arc::new(list), fetched_at: now });
        Ok(())
    }

    async fn fetch_lists_for(&self, vp: &Presentation, now: u64) {
        let mut wanted: BTreeMap<String, String> = BTreeMap::new();
        for vc in &vp.credentials {
            wanted
                .entry(vc.credential_status.status_list_url.clone())
                .or_insert_with(|| vc.issuer.clone());
        }
        let fresh = self.list_view(now);
        for (url, issuer) in wanted {
            if fresh.by_url.contains_key(&url) {
                continue;
            }
            if let Err(e) = self.fetch_status_list(&issuer, &url, now).await {
                tracing::debug!(url, "synchronous status-list fetch failed: {e}");
            }
        }
    }

    // ---- periodic duties --------------------------------------------------------

    /// One refresh cycle: exactly one fetch per distinct status-list URL
    /// referenced by cached capabilities or subscription records, however
    /// many consumers they cover.
    pub async fn refresh_status_lists(&self, now: u64) -> Vec<RefreshOutcome> {
        let mut wanted: BTreeMap<String, String> = BTreeMap::new();
        {
            let caps = self.capabilities.read().unwrap();
            for cached in caps.values() {
                wanted
                    .entry(cached.vc_ref.status_list_url.clone())
                    .or_insert_with(|| cached.vc_ref.issuer.clone());
            }
            let subs = self.subscriptions.read().unwrap();
            for record in subs.values() {
                if let AuthSource::Credential(vc_ref) = &record.source {
                    wanted
                        .entry(vc_ref.status_list_url.clone())
                        .or_insert_with(|| vc_ref.issuer.clone());
                }
            }
        }
        let mut outcomes = Vec::new();
        for (url, issuer) in wanted {
            let result = match self.fetch_status_list(&issuer, &url, now).await {
                Ok(()) => "refreshed".to_string(),
                // keep the previous list; staleness catches up with it via
                // the freshness window
                Err(e) => format!("failed: {e}"),
            };
            outcomes.push(RefreshOutcome { issuer, url, result });
        }
        outcomes
    }

    /// Drop subscriptions whose authorization no longer holds: credential
    /// expired or revoked (or its list can no longer be trusted as fresh),
    /// or centralized policies no longer grant Subscribe on the filter.
    /// Returns the broker ids acted upon.
    pub async fn sweep_subscriptions(&self, now: u64) -> Vec<String> {
        self.purge_expired(now);
        let records: Vec<SubscriptionRecord> =
            self.subscriptions.read().unwrap().values().cloned().collect();
        let mut removed = Vec::new();
        for record in records {
            let authorized = match &record.source {
                AuthSource::Credential(vc_ref) => {
                    if now >= vc_ref.expires_at {
                        false
                    } else {
                        let view = self.list_view(now);
                        match view.list_for(&vc_ref.issuer, &vc_ref.status_list_url) {
                            Some(list) => !list.is_revoked(vc_ref.status_index).unwrap_or(true),
                            // no fresh list: we cannot vouch for the grant
                            None => false,
                        }
                    }
                }
                AuthSource::Centralized => {
                    match self.fetch_policies(&record.consumer_id).await {
                        Ok(policies) => {
                            let oracle =
                                self.snapshot_oracle(std::slice::from_ref(&record.filter), now).await;
                            decide(
                                &policies,
                                &record.consumer_id,
                                Operation::Subscribe,
                                &record.filter,
                                &oracle,
                            )
                        }
                        // PAP unreachable is transient: keep and retry next sweep
                        Err(_) => continue,
                    }
                }
            };
            if authorized {
                continue;
            }
            match self.delete_broker_subscription(&record.broker_subscription_id).await {
                Ok(()) => {
                    self.subscriptions.write().unwrap().remove(&record.broker_subscription_id);
                    if let AuthSource::Credential(vc_ref) = &record.source {
                        self.drop_capabilities_of(vc_ref);
                    }
                    removed.push(record.broker_subscription_id.clone());
                }
                Err(e) => {
                    // broker unreachable: keep the record, retry next sweep
                    tracing::debug!(
                        subscription = %record.broker_subscription_id,
                        "un-subscription failed, will retry: {e}"
                    );
                }
            }
        }
        removed
    }

    async fn delete_broker_subscription(&self, id: &str) -> Result<(), String> {
        let url = format!(
            "{}/ngsi-ld/v1/subscriptions/{}",
            self.cfg.broker_url.trim_end_matches('/'),
            crate::wire::percent_encode(id)
        );
        let resp = self.http.delete(&url).send().await.map_err(|e| e.to_string())?;
        // 404 means it is already gone, which is the goal
        if resp.status().is_success() || resp.status() == reqwest::StatusCode::NOT_FOUND {
            Ok(())
        } else {
            Err(format!("status {}", resp.status()))
        }
    }

    /// Once a credential is revoked, every capability it conveyed goes away.
    fn drop_capabilities_of(&self, vc_ref: &VcRef) {
        self.capabilities.write().unwrap().retain(|_, cached| cached.vc_ref != *vc_ref);
    }

    fn purge_expired(&self, now: u64) {
        self.capabilities.write().unwrap().retain(|_, cached| cached.expires_at > now);
        self.grants.lock().unwrap().retain(|_, grant| grant.expires_at > now);
    }

    // ---- subscription registry ---------------------------------------------------

    pub fn register_subscription(
        &self,
        registration: &SubscriptionRegistration,
        now: u64,
    ) -> Result<(), PdpError> {
        let grant = self
            .grants
            .lock()
            .unwrap()
            .remove(&registration.grant_id)
            .filter(|g| g.expires_at > now)
            .ok_or_else(|| PdpError::NotFound("grant".into()))?;
        let mut subs = self.subscriptions.write().unwrap();
        if subs.contains_key(&registration.broker_subscription_id) {
            return Err(PdpError::Conflict(registration.broker_subscription_id.clone()));
        }
        let mut record = grant.record;
        record.broker_subscription_id = registration.broker_subscription_id.clone();
        subs.insert(registration.broker_subscription_id.clone(), record);
        Ok(())
    }

    pub fn subscription(&self, broker_id: &str) -> Option<SubscriptionRecord> {
        self.subscriptions.read().unwrap().get(broker_id).cloned()
    }

    pub fn unregister_subscription(&self, broker_id: &str) -> Result<(), PdpError> {
        self.subscriptions
            .write()
            .unwrap()
            .remove(broker_id)
            .map(|_| ())
            .ok_or_else(|| PdpError::NotFound(broker_id.to_string()))
    }

    pub fn subscription_records(&self) -> Vec<SubscriptionRecord> {
        self.subscriptions.read().unwrap().values().cloned().collect()
    }

    pub fn cached_capability_count(&self) -> usize {
        self.capabilities.read().unwrap().len()
    }

    // ---- background loops ----------------------------------------------------------

    /// Periodic refresh (each cycle followed by a sweep, so revocations act
    /// promptly) plus an independent sweep timer.
    pub fn spawn_background(self: &Arc<Self>) -> Vec<tokio::task::JoinHandle<()>> {
        let refresher = {
            let pdp = self.clone();
            tokio::spawn(async move {
                let mut tick = tokio::time::interval(pdp.cfg.refresh_interval);
                tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
                loop {
                    tick.tick().await;
                    let now = epoch_now();
                    pdp.refresh_status_lists(now).await;
                    pdp.sweep_subscriptions(now).await;
                }
            })
        };
        let sweeper = {
            let pdp = self.clone();
            tokio::spawn(async move {
                let mut tick = tokio::time::interval(pdp.cfg.sweep_interval);
                tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
                loop {
                    tick.tick().await;
                    pdp.sweep_subscriptions(epoch_now()).await;
                }
            })
        };
        vec![refresher, sweeper]
    }
}

fn subscription_delete_id(descriptor: &RequestDescriptor) -> Option<String> {
    let raw = descriptor.path.strip_prefix("/ngsi-ld/v1/subscriptions/")?;
    percent_decode(raw)
}

// ---- HTTP layer ------------------------------------------------------------

pub fn router(pdp: Arc<Pdp>) -> Router {
    Router::new()
        .route("/decide", post(decide_handler))
        .route("/nonces", post(mint_nonce))
        .route("/subscriptions", post(register_subscription))
        .route("/subscriptions/{id}", get(get_subscription).delete(unregister))
        .route("/status-lists", post(supply_status_list))
        .route("/metrics", get(metrics))
        .route("/admin/refresh", post(admin_refresh))
        .route("/admin/sweep", post(admin_sweep))
        .with_state(pdp)
}

async fn decide_handler(
    State(pdp): State<Arc<Pdp>>,
    Json(req): Json<AccessRequest>,
) -> Json<Decision> {
    Json(pdp.authorize(&req, epoch_now()).await)
}

async fn mint_nonce(State(pdp): State<Arc<Pdp>>) -> Json<Challenge> {
    Json(pdp.mint_nonce(epoch_now()))
}

async fn register_subscription(
    State(pdp): State<Arc<Pdp>>,
    Json(registration): Json<SubscriptionRegistration>,
) -> Result<StatusCode, PdpError> {
    pdp.register_subscription(&registration, epoch_now())?;
    Ok(StatusCode::CREATED)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SubscriptionInfo {
    pub consumer_id: String,
    pub filter: ResourceUrl,
}

async fn get_subscription(
    State(pdp): State<Arc<Pdp>>,
    Path(id): Path<String>,
) -> Result<Json<SubscriptionInfo>, PdpError> {
    let record = pdp.subscription(&id).ok_or(PdpError::NotFound(id))?;
    Ok(Json(SubscriptionInfo { consumer_id: record.consumer_id, filter: record.filter }))
}

async fn unregister(
    State(pdp): State<Arc<Pdp>>,
    Path(id): Path<String>,
) -> Result<StatusCode, PdpError> {
    pdp.unregister_subscription(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

/// Third parties (or the consumer itself) may supply a signed status list;
/// availability does not depend on reaching the PAP.
#[derive(Debug, Serialize, Deserialize)]
pub struct StatusListSupply {
    pub issuer: String,
    pub url: String,
    pub list: StatusList,
}

async fn supply_status_list(
    State(pdp): State<Arc<Pdp>>,
    Json(supply): Json<StatusListSupply>,
) -> Result<StatusCode, PdpError> {
    pdp.accept_status_list(&supply.issuer, &supply.url, supply.list, epoch_now())
        .map_err(PdpError::Validation)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn metrics(State(pdp): State<Arc<Pdp>>) -> Json<PdpMetrics> {
    Json(pdp.metrics())
}

async fn admin_refresh(State(pdp): State<Arc<Pdp>>) -> Json<Vec<RefreshOutcome>> {
    Json(pdp.refresh_status_lists(epoch_now()).await)
}

async fn admin_sweep(State(pdp): State<Arc<Pdp>>) -> Json<Vec<String>> {
    Json(pdp.sweep_subscriptions(epoch_now()).await)
}
