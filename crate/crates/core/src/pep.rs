//! Policy Enforcement Point: a transparent HTTP reverse proxy.
//!
//! Every request aimed at the broker passes through here. The proxy
//! classifies it into an (operation, targets) pair from the endpoint shape,
//! attaches whatever proof the caller supplied, and asks the decision point.
//! Permitted requests are forwarded verbatim (minus hop-by-hop and proof
//! headers) and the broker's response is relayed back; everything else is
//! rejected before the broker ever sees it. Requests with no proof at all get
//! a nonce challenge.

use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::extract::{Request, State};
use axum::http::{HeaderMap, HeaderName, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::any;
use axum::{Json, Router};
use serde_json::json;

use crate::broker::SubscriptionRequest;
use crate::credential::{IdentityToken, Presentation};
use crate::pdp::SubscriptionInfo;
use crate::policy::{Operation, ResourceUrl};
use crate::wire::{
    b64_decode, percent_decode, AccessRequest, Challenge, Decision, ProofMaterial,
    RequestDescriptor, SubscriptionRegistration, BEARER_PREFIX, HDR_AUTHORIZATION,
    HDR_PRESENTATION, NGSI_PREFIX,
};

const MAX_BODY_BYTES: usize = 1 << 20;

#[derive(Debug, Clone)]
pub struct PepConfig {
    pub broker_url: String,
    pub pdp_url: String,
    /// The audience URL bound into presentations for this deployment.
    pub public_url: String,
}

pub struct Pep {
    cfg: PepConfig,
    http: reqwest::Client,
}

#[derive(Debug, PartialEq)]
pub enum Classified {
    /// Fully classified from the request shape alone.
    Operation { operation: Operation, targets: Vec<ResourceUrl> },
    /// Deleting a subscription is authorized against the original filter,
    /// which lives in the decision point's registry.
    SubscriptionDelete { id: String },
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("unclassifiable request: {0}")]
pub struct ClassifyError(String);

/// Map an NGSI-LD request onto the resource model:
///
/// - `GET /entities?type=T`                → Read, type T
/// - `GET /entities/{id}`                  → Read, object id
/// - `GET /entities/{id}?attrs=a,b`        → Read, attributes id/a, id/b
/// - `PATCH /entities/{id}/attrs/{a}`      → Write, attribute id/a
/// - `POST /entities`                      → Write, type of the posted entity
/// - `POST /subscriptions`                 → Subscribe, the body's filter
/// - `DELETE /subscriptions/{id}`          → Subscribe, the original filter
///
/// Anything else is unclassifiable and never forwarded.
pub fn classify(
    method: &Method,
    path: &str,
    query: Option<&str>,
    body: &[u8],
) -> Result<Classified, ClassifyError> {
    let rest = path
        .strip_prefix(NGSI_PREFIX)
        .ok_or_else(|| ClassifyError(format!("path {path:?} outside {NGSI_PREFIX}")))?;
    let segments: Vec<String> = rest
        .split('/')
        .filter(|s| !s.is_empty())
        .map(|s| percent_decode(s).ok_or_else(|| ClassifyError(format!("bad escape in {s:?}"))))
        .collect::<Result<_, _>>()?;

    let op_targets = match (method, segments.as_slice()) {
        (&Method::GET, [entities]) if entities == "entities" => {
            let t = query_param(query, "type")
                .ok_or_else(|| ClassifyError("entity query without ?type=".into()))?;
            let target = ResourceUrl::type_url(&t).map_err(bad_url)?;
            Classified::Operation { operation: Operation::Read, targets: vec![target] }
        }
        (&Method::GET, [entities, id]) if entities == "entities" => {
            let object = ResourceUrl::object_url(id).map_err(bad_url)?;
            let attrs = query_param(query, "attrs").unwrap_or_default();
            let names: Vec<&str> = attrs.split(',').filter(|s| !s.is_empty()).collect();
            if names.is_empty() {
                Classified::Operation { operation: Operation::Read, targets: vec![object] }
            } else {
                let targets = names
                    .iter()
                    .map(|name| ResourceUrl::attr_of(&object, name).map_err(bad_url))
                    .collect::<Result<Vec<_>, _>>()?;
                Classified::Operation { operation: Operation::Read, targets }
            }
        }
        (&Method::PATCH, [entities, id, attrs, attr])
            if entities == "entities" && attrs == "attrs" =>
        {
            let object = ResourceUrl::object_url(id).map_err(bad_url)?;
            let target = ResourceUrl::attr_of(&object, attr).map_err(bad_url)?;
            Classified::Operation { operation: Operation::Write, targets: vec![target] }
        }
        (&Method::POST, [entities]) if entities == "entities" => {
            let doc: serde_json::Value = serde_json::from_slice(body)
                .map_err(|e| ClassifyError(format!("entity body: {e}")))?;
            let entity_type = doc
                .get("type")
                .and_then(|t| t.as_str())
                .ok_or_else(|| ClassifyError("entity body without type".into()))?;
            let target = ResourceUrl::type_url(entity_type).map_err(bad_url)?;
            Classified::Operation { operation: Operation::Write, targets: vec![target] }
        }
        (&Method::POST, [subscriptions]) if subscriptions == "subscriptions" => {
            let req: SubscriptionRequest = serde_json::from_slice(body)
                .map_err(|e| ClassifyError(format!("subscription body: {e}")))?;
            let filter = req.filter().map_err(|e| ClassifyError(e.to_string()))?;
            Classified::Operation { operation: Operation::Subscribe, targets: vec![filter] }
        }
        (&Method::DELETE, [subscriptions, id]) if subscriptions == "subscriptions" => {
            Classified::SubscriptionDelete { id: id.clone() }
        }
        _ => return Err(ClassifyError(format!("{method} {path}"))),
    };
    Ok(op_targets)
}

fn bad_url(e: crate::policy::PolicyError) -> ClassifyError {
    ClassifyError(e.to_string())
}

fn query_param(query: Option<&str>, name: &str) -> Option<String> {
    for pair in query?.split('&') {
        let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
        if percent_decode(k).as_deref() == Some(name) {
            return percent_decode(v);
        }
    }
    None
}

/// Proof material from the request headers.
fn extract_proof(headers: &HeaderMap) -> Result<Option<ProofMaterial>, String> {
    if let Some(raw) = headers.get(HDR_PRESENTATION) {
        let b64 = raw.to_str().map_err(|_| "presentation header is not ASCII".to_string())?;
        let bytes = b64_decode(b64).map_err(|e| format!("presentation header: {e}"))?;
        let presentation: Presentation =
            serde_json::from_slice(&bytes).map_err(|e| format!("presentation header: {e}"))?;
        return Ok(Some(ProofMaterial::Presentation { presentation }));
    }
    if let Some(raw) = headers.get(HDR_AUTHORIZATION) {
        let value = raw.to_str().map_err(|_| "authorization header is not ASCII".to_string())?;
        let b64 = value
            .strip_prefix(BEARER_PREFIX)
            .ok_or_else(|| "authorization header is not a Bearer value".to_string())?;
        let bytes = b64_decode(b64).map_err(|e| format!("bearer token: {e}"))?;
        let token: IdentityToken =
            serde_json::from_slice(&bytes).map_err(|e| format!("bearer token: {e}"))?;
        return Ok(Some(ProofMaterial::IdentityToken { token }));
    }
    Ok(None)
}

/// Hop-by-hop headers plus the proxy's own proof headers; everything else is
/// forwarded byte-identically.
fn strip_header(name: &HeaderName) -> bool {
    matches!(
        name.as_str(),
        "connection"
            | "keep-alive"
            | "proxy-authenticate"
            | "proxy-authorization"
            | "te"
            | "trailers"
            | "transfer-encoding"
            | "upgrade"
            | "host"
            | "content-length"
    ) || name.as_str() == HDR_AUTHORIZATION
        || name.as_str() == HDR_PRESENTATION
}

impl Pep {
    pub fn new(cfg: PepConfig) -> Arc<Self> {
        Arc::new(Pep { cfg, http: reqwest::Client::new() })
    }

    pub fn public_url(&self) -> &str {
        &self.cfg.public_url
    }

    async fn challenge(&self) -> Response {
        let url = format!("{}/nonces", self.cfg.pdp_url.trim_end_matches('/'));
        match self.http.post(&url).send().await {
            Ok(resp) if resp.status().is_success() => match resp.json::<Challenge>().await {
                Ok(challenge) => {
                    (StatusCode::UNAUTHORIZED, Json(challenge)).into_response()
                }
                Err(_) => service_unavailable("decision point returned a malformed challenge"),
            },
            _ => service_unavailable("decision point unreachable"),
        }
    }

    async fn decide(&self, access: &AccessRequest) -> Result<Decision, Response> {
        let url = format!("{}/decide", self.cfg.pdp_url.trim_end_matches('/'));
        let resp = self
            .http
            .post(&url)
            .json(access)
            .send()
            .await
            .map_err(|_| service_unavailable("decision point unreachable"))?;
        if !resp.status().is_success() {
            return Err(service_unavailable("decision point error"));
        }
        resp.json::<Decision>()
            .await
            .map_err(|_| service_unavailable("decision point returned a malformed decision"))
    }

    async fn subscription_info(&self, id: &str) -> Result<Option<SubscriptionInfo>, Response> {
        let url = format!(
            "{}/subscriptions/{}",
            self.cfg.pdp_url.trim_end_matches('/'),
            crate::wire::percent_encode(id)
        );
        let resp = self
            .http
            .get(&url)
            .send()
            .await
            .map_err(|_| service_unavailable("decision point unreachable"))?;
        if resp.status() == reqwest::StatusCode::NOT_FOUND {
            return Ok(None);
        }
        if !resp.status().is_success() {
            return Err(service_unavailable("decision point error"));
        }
        resp.json::<SubscriptionInfo>()
            .await
            .map(Some)
            .map_err(|_| service_unavailable("decision point returned malformed data"))
    }

    async fn forward(
        &self,
        method: Method,
        path_and_query: &str,
        headers: &HeaderMap,
        body: Vec<u8>,
    ) -> Result<reqwest::Response, Response> {
        let url = format!("{}{}", self.cfg.broker_url.trim_end_matches('/'), path_and_query);
        let mut upstream = self
            .http
            .request(reqwest::Method::from_bytes(method.as_str().as_bytes()).unwrap(), &url);
        for (name, value) in headers {
            if !strip_header(name) {
                upstream = upstream.header(name.as_str(), value.as_bytes());
            }
        }
        upstream
            .body(body)
            .send()
            .await
            .map_err(|_| (StatusCode::BAD_GATEWAY, "broker unreachable").into_response())
    }

    async fn relay(&self, upstream: reqwest::Response) -> Response {
        let status = StatusCode::from_u16(upstream.status().as_u16())
            .unwrap_or(StatusCode::BAD_GATEWAY);
        let mut builder = Response::builder().status(status);
        for (name, value) in upstream.headers() {
            let keep = HeaderName::from_bytes(name.as_str().as_bytes())
                .ok()
                .filter(|n| !strip_header(n));
            if let (Some(n), Ok(v)) = (keep, HeaderValue::from_bytes(value.as_bytes())) {
                builder = builder.header(n, v);
            }
        }
        match upstream.bytes().await {
            Ok(bytes) => builder.body(Body::from(bytes)).unwrap_or_else(|_| {
                (StatusCode::BAD_GATEWAY, "broker response could not be relayed").into_response()
            }),
            Err(_) => (StatusCode::BAD_GATEWAY, "broker response could not be read").into_response(),
        }
    }

    async fn register_subscription(&self, grant_id: &str, broker_id: &str) -> Result<(), ()> {
        let url = format!("{}/subscriptions", self.cfg.pdp_url.trim_end_matches('/'));
        let body = SubscriptionRegistration {
            grant_id: grant_id.to_string(),
            broker_subscription_id: broker_id.to_string(),
        };
        match self.http.post(&url).json(&body).send().await {
            Ok(resp) if resp.status().is_success() => Ok(()),
            _ => Err(()),
        }
    }

    async fn unregister_subscription(&self, broker_id: &str) {
        let url = format!(
            "{}/subscriptions/{}",
            self.cfg.pdp_url.trim_end_matches('/'),
            crate::wire::percent_encode(broker_id)
        );
        if let Err(e) = self.http.delete(&url).send().await {
            tracing::debug!("subscription unregistration failed: {e}");
        }
    }

    async fn rollback_subscription(&self, broker_id: &str) {
        let url = format!(
            "{}/ngsi-ld/v1/subscriptions/{}",
            self.cfg.broker_url.trim_end_matches('/'),
            crate::wire::percent_encode(broker_id)
        );
        if let Err(e) = self.http.delete(&url).send().await {
            tracing::warn!("subscription rollback failed, registry may lag: {e}");
        }
    }
}

fn service_unavailable(detail: &str) -> Response {
    (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "error": detail }))).into_response()
}

fn forbidden(decision: &Decision) -> Response {
    (StatusCode::FORBIDDEN, Json(decision)).into_response()
}

// ---- HTTP layer ------------------------------------------------------------

pub fn router(pep: Arc<Pep>) -> Router {
    Router::new().fallback(any(proxy)).with_state(pep)
}

async fn proxy(State(pep): State<Arc<Pep>>, request: Request) -> Response {
    let method = request.method().clone();
    let uri = request.uri().clone();
    let headers = request.headers().clone();
    let body = match to_bytes(request.into_body(), MAX_BODY_BYTES).await {
        Ok(bytes) => bytes.to_vec(),
        Err(_) => {
            return (StatusCode::PAYLOAD_TOO_LARGE, "request body too large").into_response()
        }
    };

    // classification is fail-closed: unclassifiable traffic stops here
    let classified = match classify(&method, uri.path(), uri.query(), &body) {
        Ok(c) => c,
        Err(e) => {
            return (StatusCode::BAD_REQUEST, Json(json!({ "error": e.to_string() })))
                .into_response()
        }
    };

    let proof = match extract_proof(&headers) {
        Ok(Some(proof)) => proof,
        Ok(None) => return pep.challenge().await,
        Err(e) => {
            return (StatusCode::BAD_REQUEST, Json(json!({ "error": e }))).into_response()
        }
    };

    let (operation, targets, delete_sub_id) = match classified {
        Classified::Operation { operation, targets } => (operation, targets, None),
        Classified::SubscriptionDelete { id } => {
            let info = match pep.subscription_info(&id).await {
                Ok(Some(info)) => info,
                Ok(None) => {
                    return forbidden(&Decision::deny("unknown_subscription"));
                }
                Err(resp) => return resp,
            };
            (Operation::Subscribe, vec![info.filter], Some(id))
        }
    };

    let access = AccessRequest {
        proof,
        operation,
        targets,
        descriptor: RequestDescriptor { method: method.to_string(), path: uri.path().to_string() },
    };

    let decision = match pep.decide(&access).await {
        Ok(decision) => decision,
        Err(resp) => return resp,
    };
    if !decision.is_permit() {
        return forbidden(&decision);
    }

    let path_and_query = uri
        .path_and_query()
        .map(|pq| pq.to_string())
        .unwrap_or_else(|| uri.path().to_string());
    let upstream = match pep.forward(method.clone(), &path_and_query, &headers, body).await {
        Ok(upstream) => upstream,
        Err(resp) => return resp,
    };
    let upstream_status = upstream.status();

    // permitted subscribes bind the broker-assigned id to the grant so the
    // decision point can keep evaluating it
    if operation == Operation::Subscribe && method == Method::POST && upstream_status.is_success()
    {
        let grant_id = decision.grant_id.clone().unwrap_or_default();
        let upstream_headers = upstream.headers().clone();
        let bytes = match upstream.bytes().await {
            Ok(b) => b,
            Err(_) => {
                return (StatusCode::BAD_GATEWAY, "broker response could not be read")
                    .into_response()
            }
        };
        let broker_id = serde_json::from_slice::<serde_json::Value>(&bytes)
            .ok()
            .and_then(|v| v.get("id").and_then(|id| id.as_str()).map(str::to_string));
        match broker_id {
            Some(id) if !grant_id.is_empty() => {
                if pep.register_subscription(&grant_id, &id).await.is_err() {
                    // continuous evaluation is part of the contract; a
                    // subscription the registry cannot see must not survive
                    pep.rollback_subscription(&id).await;
                    return service_unavailable("subscription registration failed");
                }
            }
            _ => {
                return service_unavailable("broker subscription id missing");
            }
        }
        let mut builder = Response::builder()
            .status(StatusCode::from_u16(upstream_status.as_u16()).unwrap_or(StatusCode::CREATED));
        for (name, value) in &upstream_headers {
            let keep = HeaderName::from_bytes(name.as_str().as_bytes())
                .ok()
                .filter(|n| !strip_header(n));
            if let (Some(n), Ok(v)) = (keep, HeaderValue::from_bytes(value.as_bytes())) {
                builder = builder.header(n, v);
            }
        }
        return builder.body(Body::from(bytes)).unwrap_or_else(|_| {
            (StatusCode::BAD_GATEWAY, "broker response could not be relayed").into_response()
        });
    }

    if let Some(sub_id) = delete_sub_id {
        if upstream_status.is_success() || upstream_status == reqwest::StatusCode::NOT_FOUND {
            pep.unregister_subscription(&sub_id).await;
        }
    }

    pep.relay(upstream).await
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::UrlKind;

    fn obj(s: &str) -> ResourceUrl {
        ResourceUrl::object_url(s).unwrap()
    }

    #[test]
    fn classify_read_attrs() {
        let c = classify(
            &Method::GET,
            "/ngsi-ld/v1/entities/urn%3Angsi-ld%3Alamp1",
            Some("attrs=status"),
            b"",
        )
        .unwrap();
        assert_eq!(
            c,
            Classified::Operation {
                operation: Operation::Read,
                targets: vec![ResourceUrl::attr_of(&obj("urn:ngsi-ld:lamp1"), "status").unwrap()],
            }
        );
    }

    #[test]
    fn classify_read_object_and_multi_attrs() {
        let c = classify(&Method::GET, "/ngsi-ld/v1/entities/urn%3Alamp1", None, b"").unwrap();
        assert_eq!(
            c,
            Classified::Operation { operation: Operation::Read, targets: vec![obj("urn:lamp1")] }
        );
        let c = classify(
            &Method::GET,
            "/ngsi-ld/v1/entities/urn%3Alamp1",
            Some("attrs=status,consumption"),
            b"",
        )
        .unwrap();
        match c {
            Classified::Operation { operation, targets } => {
                assert_eq!(operation, Operation::Read);
                assert_eq!(targets.len(), 2);
                assert!(targets.iter().all(|t| t.kind() == UrlKind::Attribute));
            }
            _ => panic!("expected operation"),
        }
    }

    #[test]
    fn classify_type_query() {
        let c = classify(
            &Method::GET,
            "/ngsi-ld/v1/entities",
            Some("type=https%3A%2F%2Fds.example%2Ftypes%2FSmartLamp"),
            b"",
        )
        .unwrap();
        assert_eq!(
            c,
            Classified::Operation {
                operation: Operation::Read,
                targets: vec![
                    ResourceUrl::type_url("https://ds.example/types/SmartLamp").unwrap()
                ],
            }
        );
    }

    #[test]
    fn classify_write_paths() {
        let c = classify(
            &Method::PATCH,
            "/ngsi-ld/v1/entities/urn%3Alamp1/attrs/status",
            None,
            b"",
        )
        .unwrap();
        assert_eq!(
            c,
            Classified::Operation {
                operation: Operation::Write,
                targets: vec![ResourceUrl::attr_of(&obj("urn:lamp1"), "status").unwrap()],
            }
        );
        let body = br#"{"id":"urn:lamp9","type":"https://ds.example/types/SmartLamp"}"#;
        let c = classify(&Method::POST, "/ngsi-ld/v1/entities", None, body).unwrap();
        assert_eq!(
            c,
            Classified::Operation {
                operation: Operation::Write,
                targets: vec![
                    ResourceUrl::type_url("https://ds.example/types/SmartLamp").unwrap()
                ],
            }
        );
    }

    #[test]
    fn classify_subscriptions() {
        let body = br#"{"type":"Subscription","entities":[{"type":"https://ds.example/types/SmartLamp"}],"notification":{"endpoint":{"uri":"http://127.0.0.1:9/sink"}}}"#;
        let c = classify(&Method::POST, "/ngsi-ld/v1/subscriptions", None, body).unwrap();
        assert_eq!(
            c,
            Classified::Operation {
                operation: Operation::Subscribe,
                targets: vec![
                    ResourceUrl::type_url("https://ds.example/types/SmartLamp").unwrap()
                ],
            }
        );
        let c = classify(&Method::DELETE, "/ngsi-ld/v1/subscriptions/urn%3Asub%3A1", None, b"")
            .unwrap();
        assert_eq!(c, Classified::SubscriptionDelete { id: "urn:sub:1".into() });
    }

    #[test]
    fn classify_rejects_everything_else() {
        assert!(classify(&Method::GET, "/unknown/path", None, b"").is_err());
        assert!(classify(&Method::GET, "/ngsi-ld/v1/entities", None, b"").is_err());
        assert!(classify(&Method::DELETE, "/ngsi-ld/v1/entities/urn%3Ax", None, b"").is_err());
        assert!(classify(&Method::POST, "/ngsi-ld/v1/entities", None, b"not json").is_err());
        assert!(
            classify(&Method::GET, "/ngsi-ld/v1/entities/not%20a%20url", None, b"").is_err()
        );
    }

    #[test]
    fn query_param_decodes() {
        assert_eq!(
            query_param(Some("type=https%3A%2F%2Fx%2FT&other=1"), "type").as_deref(),
            Some("https://x/T")
        );
        assert_eq!(query_param(Some("a=1"), "type"), None);
        assert_eq!(query_param(None, "type"), None);
    }

    #[test]
    fn proof_extraction() {
        let mut headers = HeaderMap::new();
        assert!(extract_proof(&headers).unwrap().is_none());
        headers.insert(HDR_AUTHORIZATION, HeaderValue::from_static("Bearer not-base64!!"));
        assert!(extract_proof(&headers).is_err());
        headers.insert(HDR_AUTHORIZATION, HeaderValue::from_static("Basic abc"));
        assert!(extract_proof(&headers).is_err());
    }
}
