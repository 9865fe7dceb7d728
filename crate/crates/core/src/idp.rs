//! Minimal identity provider.
//!
//! A registry of consumer identifiers behind a password-grant-style endpoint:
//! register once, then trade the secret for a signed identity token. Secrets
//! are stored as salted hashes and compared in constant time.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest as _, Sha256};

use crate::credential::{IdentityToken, KeyPair, PublicKey};
use crate::wire::epoch_now;

pub const DEFAULT_TOKEN_TTL_SECS: u64 = 3600;

#[derive(Debug, thiserror::Error)]
pub enum IdpError {
    #[error("consumer {0:?} already registered")]
    Conflict(String),
    #[error("validation: {0}")]
    Validation(String),
    #[error("authentication failed")]
    AuthFailed,
}

impl IntoResponse for IdpError {
    fn into_response(self) -> Response {
        let status = match &self {
            IdpError::Conflict(_) => StatusCode::CONFLICT,
            IdpError::Validation(_) => StatusCode::BAD_REQUEST,
            IdpError::AuthFailed => StatusCode::UNAUTHORIZED,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

struct ConsumerRecord {
    salt: [u8; 16],
    secret_hash: [u8; 32],
    #[allow(dead_code)]
    registered_at: u64,
}

pub struct Idp {
    issuer: String,
    key: KeyPair,
    token_ttl: u64,
    registry: RwLock<BTreeMap<String, ConsumerRecord>>,
}

fn salted_hash(salt: &[u8; 16], secret: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(salt);
    hasher.update(secret.as_bytes());
    hasher.finalize().into()
}

fn constant_time_eq(a: &[u8; 32], b: &[u8; 32]) -> bool {
    a.iter().zip(b.iter()).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

impl Idp {
    pub fn new(issuer: impl Into<String>, key: KeyPair) -> Arc<Self> {
        Self::with_token_ttl(issuer, key, DEFAULT_TOKEN_TTL_SECS)
    }

    pub fn with_token_ttl(issuer: impl Into<String>, key: KeyPair, token_ttl: u64) -> Arc<Self> {
        Arc::new(Idp {
            issuer: issuer.into(),
            key,
            token_ttl,
            registry: RwLock::new(BTreeMap::new()),
        })
    }

    pub fn issuer(&self) -> &str {
        &self.issuer
    }

    pub fn public_key(&self) -> PublicKey {
        self.key.public_key()
    }

    pub fn register_consumer(&self, consumer_id: &str, secret: &str) -> Result<(), IdpError> {
        if consumer_id.is_empty() {
            return Err(IdpError::Validation("consumer id must be non-empty".into()));
        }
        if secret.is_empty() {
            return Err(IdpError::Validation("secret must be non-empty".into()));
        }
        let mut registry = self.registry.write().unwrap();
        if registry.contains_key(consumer_id) {
            return Err(IdpError::Conflict(consumer_id.to_string()));
        }
        let mut salt = [0u8; 16];
        getrandom::fill(&mut salt).expect("os entropy");
        registry.insert(
            consumer_id.to_string(),
            ConsumerRecord {
                salt,
                secret_hash: salted_hash(&salt, secret),
                registered_at: epoch_now(),
            },
        );
        Ok(())
    }

    pub fn issue_identity_token(
        &self,
        consumer_id: &str,
        secret: &str,
        now: u64,
    ) -> Result<IdentityToken, IdpError> {
        let registry = self.registry.read().unwrap();
        // hash against a dummy record when the id is unknown so both failure
        // paths do the same work
        static DUMMY_SALT: [u8; 16] = [0u8; 16];
        let (salt, expected) = match registry.get(consumer_id) {
            Some(record) => (&record.salt, record.secret_hash),
            None => (&DUMMY_SALT, [0xFFu8; 32]),
        };
        if !constant_time_eq(&salted_hash(salt, secret), &expected) {
            return Err(IdpError::AuthFailed);
        }
        IdentityToken::sign(consumer_id, &self.issuer, now, now + self.token_ttl, &self.key)
            .map_err(|e| IdpError::Validation(e.to_string()))
    }
}

// ---- HTTP layer ------------------------------------------------------------

pub fn router(idp: Arc<Idp>) -> Router {
    Router::new()
        .route("/register", post(register))
        .route("/token", post(token))
        .route("/keys", get(keys))
        .with_state(idp)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CredentialsBody {
    pub consumer_id: String,
    pub secret: String,
}

async fn register(
    State(idp): State<Arc<Idp>>,
    Json(body): Json<CredentialsBody>,
) -> Result<StatusCode, IdpError> {
    idp.register_consumer(&body.consumer_id, &body.secret)?;
    Ok(StatusCode::CREATED)
}

async fn token(
    State(idp): State<Arc<Idp>>,
    Json(body): Json<CredentialsBody>,
) -> Result<Json<IdentityToken>, IdpError> {
    let token = idp.issue_identity_token(&body.consumer_id, &body.secret, epoch_now())?;
    Ok(Json(token))
}

async fn keys(State(idp): State<Arc<Idp>>) -> Json<serde_json::Value> {
    Json(json!({
        "issuer": idp.issuer,
        "key_id": idp.key.key_id(),
        "public_key": idp.public_key().to_b64(),
    }))
}
