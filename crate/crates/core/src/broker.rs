//! Minimal NGSI-LD-subset context broker.
//!
//! Stores digital-twin entities as plain JSON (`id`, `type`, attributes),
//! serves the handful of operations the access-control flow exercises, and
//! dispatches webhook notifications for subscription matches. The broker has
//! no authorization logic whatsoever; it sits behind the enforcement proxy
//! and also answers the decision point's type lookups.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Body;
use axum::extract::{Path, Query, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::policy::{ResourceUrl, UrlKind};
use crate::wire::{epoch_now, percent_encode, Notification};

#[derive(Debug, thiserror::Error)]
pub enum BrokerError {
    #[error("entity {0:?} already exists")]
    Conflict(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("validation: {0}")]
    Validation(String),
}

impl BrokerError {
    fn status(&self) -> StatusCode {
        match self {
            BrokerError::Conflict(_) => StatusCode::CONFLICT,
            BrokerError::NotFound(_) => StatusCode::NOT_FOUND,
            BrokerError::Validation(_) => StatusCode::BAD_REQUEST,
        }
    }
}

impl IntoResponse for BrokerError {
    fn into_response(self) -> Response {
        (self.status(), Json(json!({ "error": self.to_string() }))).into_response()
    }
}

/// A digital twin: unique id, a type, and a flat attribute map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    #[serde(rename = "type")]
    pub entity_type: String,
    #[serde(flatten)]
    pub attributes: BTreeMap<String, Value>,
}

impl Entity {
    pub fn new(id: impl Into<String>, entity_type: impl Into<String>) -> Self {
        Entity { id: id.into(), entity_type: entity_type.into(), attributes: BTreeMap::new() }
    }

    pub fn with_attr(mut self, name: impl Into<String>, value: Value) -> Self {
        self.attributes.insert(name.into(), value);
        self
    }

    fn validate(&self) -> Result<(), BrokerError> {
        let id = ResourceUrl::object_url(&self.id)
            .map_err(|e| BrokerError::Validation(format!("entity id: {e}")))?;
        if id.as_str() != self.id {
            return Err(BrokerError::Validation("entity id must be pre-normalized".into()));
        }
        if self.entity_type.is_empty() {
            return Err(BrokerError::Validation("entity type must be non-empty".into()));
        }
        for name in self.attributes.keys() {
            if name.is_empty() || name.contains('/') {
                return Err(BrokerError::Validation(format!(
                    "attribute name {name:?} must be non-empty and contain no '/'"
                )));
            }
        }
        Ok(())
    }
}

/// A standing notification request against a type or a single object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subscription {
    pub id: String,
    pub entity_filter: ResourceUrl,
    pub watched_attributes: Option<BTreeSet<String>>,
    pub notification_endpoint: String,
    pub active: bool,
}

/// Wire form of `POST /ngsi-ld/v1/subscriptions`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubscriptionRequest {
    #[serde(rename = "type", default = "subscription_type")]
    pub kind: String,
    pub entities: Vec<EntitySelector>,
    #[serde(rename = "watchedAttributes", skip_serializing_if = "Option::is_none")]
    pub watched_attributes: Option<BTreeSet<String>>,
    pub notification: NotificationParams,
}

fn subscription_type() -> String {
    "Subscription".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntitySelector {
    #[serde(rename = "type", skip_serializing_if = "Option::is_none")]
    pub entity_type: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NotificationParams {
    pub endpoint: Endpoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Endpoint {
    pub uri: String,
}

impl SubscriptionRequest {
    pub fn for_type(type_url: &str, endpoint: &str) -> Self {
        SubscriptionRequest {
            kind: subscription_type(),
            entities: vec![EntitySelector { entity_type: Some(type_url.into()), id: None }],
            watched_attributes: None,
            notification: NotificationParams { endpoint: Endpoint { uri: endpoint.into() } },
        }
    }

    pub fn for_object(id: &str, endpoint: &str) -> Self {
        SubscriptionRequest {
            kind: subscription_type(),
            entities: vec![EntitySelector { entity_type: None, id: Some(id.into()) }],
            watched_attributes: None,
            notification: NotificationParams { endpoint: Endpoint { uri: endpoint.into() } },
        }
    }

    pub fn watching(mut self, attrs: impl IntoIterator<Item = String>) -> Self {
        self.watched_attributes = Some(attrs.into_iter().collect());
        self
    }

    /// The single type-or-object filter this broker subset supports.
    pub fn filter(&self) -> Result<ResourceUrl, BrokerError> {
        if self.entities.len() != 1 {
            return Err(BrokerError::Validation(
                "subscription must select exactly one entity type or id".into(),
            ));
        }
        let sel = &self.entities[0];
        match (&sel.entity_type, &sel.id) {
            (Some(t), None) => ResourceUrl::type_url(t)
                .map_err(|e| BrokerError::Validation(format!("entity type filter: {e}"))),
            (None, Some(id)) => ResourceUrl::object_url(id)
                .map_err(|e| BrokerError::Validation(format!("entity id filter: {e}"))),
            _ => Err(BrokerError::Validation(
                "entity selector must carry exactly one of `type` or `id`".into(),
            )),
        }
    }
}

#[derive(Default, Serialize, Deserialize)]
struct Store {
    entities: BTreeMap<String, Entity>,
    subscriptions: BTreeMap<String, Subscription>,
    next_sub: u64,
}

/// One line per served request; test instrumentation for the fail-closed and
/// transparency properties.
#[derive(Debug, Clone, PartialEq)]
pub struct AccessLogEntry {
    pub method: String,
    pub path_and_query: String,
}

pub struct Broker {
    store: RwLock<Store>,
    log: Mutex<Vec<AccessLogEntry>>,
    http: reqwest::Client,
    snapshot_path: Option<PathBuf>,
}

impl Broker {
    pub fn new() -> Arc<Self> {
        Self::with_snapshot(None)
    }

    /// Load from the snapshot file when present; every mutation rewrites it.
    pub fn with_snapshot(snapshot_path: Option<PathBuf>) -> Arc<Self> {
        let store = snapshot_path
            .as_ref()
            .and_then(|p| std::fs::read(p).ok())
            .and_then(|bytes| serde_json::from_slice(&bytes).ok())
            .unwrap_or_default();
        Arc::new(Broker {
            store: RwLock::new(store),
            log: Mutex::new(Vec::new()),
            http: reqwest::Client::new(),
            snapshot_path,
        })
    }

    fn persist(&self, store: &Store) {
        if let Some(path) = &self.snapshot_path {
            if let Ok(bytes) = serde_json::to_vec_pretty(store) {
                if let Err(e) = std::fs::write(path, bytes) {
                    tracing::warn!("broker snapshot write failed: {e}");
                }
            }
        }
    }

    pub fn create_entity(&self, entity: Entity) -> Result<String, BrokerError> {
        entity.validate()?;
        let mut store = self.store.write().unwrap();
        if store.entities.contains_key(&entity.id) {
            return Err(BrokerError::Conflict(entity.id));
        }
        let id = entity.id.clone();
        store.entities.insert(id.clone(), entity);
        self.persist(&store);
        Ok(id)
    }

    /// Full entity, or a projection onto the named attributes. `id` and
    /// `type` are always present in a projection; that pair is what the
    /// decision point's type lookup consumes.
    pub fn get_entity(
        &self,
        id: &str,
        attrs_filter: Option<&BTreeSet<String>>,
    ) -> Result<Entity, BrokerError> {
        let store = self.store.read().unwrap();
        let entity =
            store.entities.get(id).ok_or_else(|| BrokerError::NotFound(id.to_string()))?;
        match attrs_filter {
            None => Ok(entity.clone()),
            Some(filter) => {
                let attributes = entity
                    .attributes
                    .iter()
                    .filter(|(k, _)| filter.contains(*k))
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect();
                Ok(Entity {
                    id: entity.id.clone(),
                    entity_type: entity.entity_type.clone(),
                    attributes,
                })
            }
        }
    }

    pub fn query_by_type(&self, entity_type: &str) -> Vec<Entity> {
        let wanted = trim_slash(entity_type);
        let store = self.store.read().unwrap();
        store
            .entities
            .values()
            .filter(|e| trim_slash(&e.entity_type) == wanted)
            .cloned()
            .collect()
    }

    pub fn delete_entity(&self, id: &str) -> Result<(), BrokerError> {
        let mut store = self.store.write().unwrap();
        store.entities.remove(id).ok_or_else(|| BrokerError::NotFound(id.to_string()))?;
        self.persist(&store);
        Ok(())
    }

    /// Set one attribute and return the subscriptions the change matched.
    /// Delivery is the caller's business (the HTTP layer fires and forgets).
    pub fn update_attribute(
        &self,
        id: &str,
        attr: &str,
        value: Value,
    ) -> Result<Vec<(Subscription, Notification)>, BrokerError> {
        if attr.is_empty() || attr.contains('/') {
            return Err(BrokerError::Validation(format!("attribute name {attr:?}")));
        }
        let mut store = self.store.write().unwrap();
        let entity =
            store.entities.get_mut(id).ok_or_else(|| BrokerError::NotFound(id.to_string()))?;
        entity.attributes.insert(attr.to_string(), value.clone());
        let entity = entity.clone();
        let matches: Vec<(Subscription, Notification)> = store
            .subscriptions
            .values()
            .filter(|sub| sub.active && subscription_matches(sub, &entity, attr))
            .map(|sub| {
                (
                    sub.clone(),
                    Notification {
                        subscription_id: sub.id.clone(),
                        entity_id: entity.id.clone(),
                        attr: attr.to_string(),
                        value: value.clone(),
                        timestamp: epoch_now(),
                    },
                )
            })
            .collect();
        self.persist(&store);
        Ok(matches)
    }

    pub fn create_subscription(&self, req: &SubscriptionRequest) -> Result<String, BrokerError> {
        let filter = req.filter()?;
        let uri = &req.notification.endpoint.uri;
        if !(uri.starts_with("http://") || uri.starts_with("https://")) {
            return Err(BrokerError::Validation(format!(
                "notification endpoint must be an http(s) URL, got {uri:?}"
            )));
        }
        let mut store = self.store.write().unwrap();
        store.next_sub += 1;
        let id = format!("urn:ngsi-ld:Subscription:{}", store.next_sub);
        store.subscriptions.insert(
            id.clone(),
            Subscription {
                id: id.clone(),
                entity_filter: filter,
                watched_attributes: req.watched_attributes.clone(),
                notification_endpoint: uri.clone(),
                active: true,
            },
        );
        self.persist(&store);
        Ok(id)
    }

    pub fn delete_subscription(&self, id: &str) -> Result<(), BrokerError> {
        let mut store = self.store.write().unwrap();
        store.subscriptions.remove(id).ok_or_else(|| BrokerError::NotFound(id.to_string()))?;
        self.persist(&store);
        Ok(())
    }

    pub fn subscription_count(&self) -> usize {
        self.store.read().unwrap().subscriptions.len()
    }

    pub fn has_subscription(&self, id: &str) -> bool {
        self.store.read().unwrap().subscriptions.contains_key(id)
    }

    pub fn access_log(&self) -> Vec<AccessLogEntry> {
        self.log.lock().unwrap().clone()
    }

    pub fn clear_access_log(&self) {
        self.log.lock().unwrap().clear();
    }

    /// POST each notification to its endpoint; failures are logged and never
    /// surface to the writer.
    fn dispatch(self: &Arc<Self>, matches: Vec<(Subscription, Notification)>) {
        for (sub, notification) in matches {
            let client = self.http.clone();
            tokio::spawn(async move {
                let result = client
                    .post(&sub.notification_endpoint)
                    .json(&notification)
                    .timeout(std::time::Duration::from_secs(2))
                    .send()
                    .await;
                if let Err(e) = result {
                    tracing::debug!(
                        subscription = %sub.id,
                        endpoint = %sub.notification_endpoint,
                        "notification delivery failed: {e}"
                    );
                }
            });
        }
    }
}

fn trim_slash(s: &str) -> &str {
    s.strip_suffix('/').unwrap_or(s)
}

fn subscription_matches(sub: &Subscription, entity: &Entity, attr: &str) -> bool {
    let filter_hits = match sub.entity_filter.kind() {
        UrlKind::Type => sub.entity_filter.as_str() == trim_slash(&entity.entity_type),
        UrlKind::Object => sub.entity_filter.as_str() == trim_slash(&entity.id),
        UrlKind::Attribute => false,
    };
    filter_hits
        && sub.watched_attributes.as_ref().is_none_or(|watched| watched.contains(attr))
}

// ---- HTTP layer ------------------------------------------------------------

pub fn router(broker: Arc<Broker>) -> Router {
    Router::new()
        .route("/ngsi-ld/v1/entities", post(create_entity).get(query_entities))
        .route("/ngsi-ld/v1/entities/{id}", get(get_entity))
        .route("/ngsi-ld/v1/entities/{id}/attrs/{attr}", patch(patch_attribute))
        .route("/ngsi-ld/v1/subscriptions", post(create_subscription))
        .route("/ngsi-ld/v1/subscriptions/{id}", axum::routing::delete(delete_subscription))
        .layer(middleware::from_fn_with_state(broker.clone(), access_log_mw))
        .with_state(broker)
}

async fn access_log_mw(
    State(broker): State<Arc<Broker>>,
    req: Request<Body>,
    next: Next,
) -> Response {
    let entry = AccessLogEntry {
        method: req.method().to_string(),
        path_and_query: req
            .uri()
            .path_and_query()
            .map(|pq| pq.to_string())
            .unwrap_or_else(|| req.uri().path().to_string()),
    };
    broker.log.lock().unwrap().push(entry);
    next.run(req).await
}

async fn create_entity(
    State(broker): State<Arc<Broker>>,
    Json(entity): Json<Entity>,
) -> Result<Response, BrokerError> {
    let id = broker.create_entity(entity)?;
    let location = format!("/ngsi-ld/v1/entities/{}", percent_encode(&id));
    Ok((
        StatusCode::CREATED,
        [(axum::http::header::LOCATION, location)],
        Json(json!({ "id": id })),
    )
        .into_response())
}

#[derive(Deserialize)]
struct EntityQuery {
    #[serde(rename = "type")]
    entity_type: Option<String>,
}

async fn query_entities(
    State(broker): State<Arc<Broker>>,
    Query(q): Query<EntityQuery>,
) -> Result<Json<Vec<Entity>>, BrokerError> {
    let t = q
        .entity_type
        .ok_or_else(|| BrokerError::Validation("entity queries require ?type=".into()))?;
    Ok(Json(broker.query_by_type(&t)))
}

#[derive(Deserialize)]
struct AttrsQuery {
    attrs: Option<String>,
}

async fn get_entity(
    State(broker): State<Arc<Broker>>,
    Path(id): Path<String>,
    Query(q): Query<AttrsQuery>,
) -> Result<Json<Entity>, BrokerError> {
    let filter: Option<BTreeSet<String>> =
        q.attrs.map(|raw| raw.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect());
    Ok(Json(broker.get_entity(&id, filter.as_ref())?))
}

async fn patch_attribute(
    State(broker): State<Arc<Broker>>,
    Path((id, attr)): Path<(String, String)>,
    Json(value): Json<Value>,
) -> Result<StatusCode, BrokerError> {
    let matches = broker.update_attribute(&id, &attr, value)?;
    broker.dispatch(matches);
    Ok(StatusCode::NO_CONTENT)
}

async fn create_subscription(
    State(broker): State<Arc<Broker>>,
    Json(req): Json<SubscriptionRequest>,
) -> Result<Response, BrokerError> {
    let id = broker.create_subscription(&req)?;
    let location = format!("/ngsi-ld/v1/subscriptions/{}", percent_encode(&id));
    Ok((
        StatusCode::CREATED,
        [(axum::http::header::LOCATION, location)],
        Json(json!({ "id": id })),
    )
        .into_response())
}

async fn delete_subscription(
    State(broker): State<Arc<Broker>>,
    Path(id): Path<String>,
) -> Result<StatusCode, BrokerError> {
    broker.delete_subscription(&id)?;
    Ok(StatusCode::NO_CONTENT)
}
