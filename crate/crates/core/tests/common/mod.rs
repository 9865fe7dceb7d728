//! In-process full-stack harness: broker, IdP, one or more PAPs, PDP, and
//! PEP on ephemeral ports, wired together, with direct handles on every
//! service's state for instrumentation.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::task::JoinHandle;

use capgate_core::broker::{self, Broker, Entity};
use capgate_core::credential::{
    CapabilityCredential, IdentityToken, KeyPair, Presentation, TrustedIssuers,
};
use capgate_core::idp::{self, Idp};
use capgate_core::pap::{self, IssuanceRequest, Pap, PapConfig};
use capgate_core::pdp::{self, Pdp, PdpConfig};
use capgate_core::pep::{self, Pep, PepConfig};
use capgate_core::policy::{Operation, Policy, ResourceUrl};
use capgate_core::wire::{
    b64_encode, epoch_now, Challenge, Notification, BEARER_PREFIX, HDR_AUTHORIZATION,
    HDR_PRESENTATION,
};

pub const LAMP_TYPE: &str = "https://ds.example/types/SmartLamp";
pub const METER_TYPE: &str = "https://ds.example/types/Meter";
pub const OWNER_KEY: &str = "owner-key";
pub const PDP_KEY: &str = "pdp-shared-secret";

pub struct StackOptions {
    pub pap_count: usize,
    pub vc_ttl_secs: u64,
    pub status_capacity: u64,
    pub nonce_ttl_secs: u64,
    pub freshness_window_secs: u64,
    pub refresh_interval: Duration,
    pub sweep_interval: Duration,
    pub spawn_background: bool,
}

impl Default for StackOptions {
    fn default() -> Self {
        StackOptions {
            pap_count: 1,
            vc_ttl_secs: 3600,
            status_capacity: 256,
            nonce_ttl_secs: 120,
            freshness_window_secs: 300,
            // long enough that nothing fires unless a test asks for it
            refresh_interval: Duration::from_secs(3600),
            sweep_interval: Duration::from_secs(3600),
            spawn_background: false,
        }
    }
}

pub struct PapHandle {
    pub pap: Arc<Pap>,
    pub url: String,
    server: JoinHandle<()>,
}

impl PapHandle {
    /// Simulate the PAP process going away.
    pub fn stop(&self) {
        self.server.abort();
    }
}

pub struct Stack {
    pub broker: Arc<Broker>,
    pub broker_url: String,
    pub idp: Arc<Idp>,
    pub idp_url: String,
    pub paps: Vec<PapHandle>,
    pub pdp: Arc<Pdp>,
    pub pdp_url: String,
    pub pep: Arc<Pep>,
    pub pep_url: String,
    pub http: reqwest::Client,
    background: Vec<JoinHandle<()>>,
}

async fn bind() -> (tokio::net::TcpListener, SocketAddr) {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    (listener, addr)
}

fn serve(listener: tokio::net::TcpListener, router: axum::Router) -> JoinHandle<()> {
    tokio::spawn(async move {
        axum::serve(listener, router).await.ok();
    })
}

impl Stack {
    pub async fn launch(options: StackOptions) -> Stack {
        let broker = Broker::new();
        let (broker_listener, broker_addr) = bind().await;
        serve(broker_listener, broker::router(broker.clone()));
        let broker_url = format!("http://{broker_addr}");

        let idp = Idp::new("idp-1", KeyPair::generate("idp-1#k1"));
        let (idp_listener, idp_addr) = bind().await;
        serve(idp_listener, idp::router(idp.clone()));
        let idp_url = format!("http://{idp_addr}");

        let mut paps = Vec::new();
        for i in 0..options.pap_count {
            let (listener, addr) = bind().await;
            let url = format!("http://{addr}");
            let mut trusted_idps = TrustedIssuers::new();
            trusted_idps.insert(idp.issuer(), idp.public_key());
            let cfg = PapConfig {
                id: format!("pap-{i}"),
                public_url: url.clone(),
                owner_keys: [("owner".to_string(), OWNER_KEY.to_string())].into(),
                pdp_keys: vec![PDP_KEY.to_string()],
                trusted_idps,
                vc_ttl_secs: options.vc_ttl_secs,
                status_capacity: options.status_capacity,
                snapshot_path: None,
            };
            let pap = Pap::new(cfg, KeyPair::generate(format!("pap-{i}#k1")));
            let server = serve(listener, pap::router(pap.clone()));
            paps.push(PapHandle { pap, url, server });
        }

        // the PEP address must exist before the PDP config binds to it
        let (pep_listener, pep_addr) = bind().await;
        let pep_url = format!("http://{pep_addr}");

        let mut trusted_paps = TrustedIssuers::new();
        let mut pap_urls = BTreeMap::new();
        for handle in &paps {
            trusted_paps.insert(handle.pap.id(), handle.pap.public_key());
            pap_urls.insert(handle.pap.id().to_string(), handle.url.clone());
        }
        let mut trusted_idps = TrustedIssuers::new();
        trusted_idps.insert(idp.issuer(), idp.public_key());
        let pdp = Pdp::new(PdpConfig {
            broker_url: broker_url.clone(),
            pap_urls,
            trusted_paps,
            trusted_idps,
            audience: pep_url.clone(),
            pdp_key: PDP_KEY.to_string(),
            nonce_ttl_secs: options.nonce_ttl_secs,
            pip_ttl_secs: 1,
            freshness_window_secs: options.freshness_window_secs,
            refresh_interval: options.refresh_interval,
            sweep_interval: options.sweep_interval,
        });
        let (pdp_listener, pdp_addr) = bind().await;
        serve(pdp_listener, pdp::router(pdp.clone()));
        let pdp_url = format!("http://{pdp_addr}");
        let background = if options.spawn_background { pdp.spawn_background() } else { Vec::new() };

        let pep = Pep::new(PepConfig {
            broker_url: broker_url.clone(),
            pdp_url: pdp_url.clone(),
            public_url: pep_url.clone(),
        });
        serve(pep_listener, pep::router(pep.clone()));

        Stack {
            broker,
            broker_url,
            idp,
            idp_url,
            paps,
            pdp,
            pdp_url,
            pep,
            pep_url,
            http: reqwest::Client::new(),
            background,
        }
    }

    pub fn pap(&self) -> &Arc<Pap> {
        &self.paps[0].pap
    }

    pub fn grant(&self, pap_idx: usize, consumer: &str, operation: Operation, resource: ResourceUrl) {
        self.paps[pap_idx]
            .pap
            .put_policy(OWNER_KEY, Policy::new(consumer, operation, resource).unwrap())
            .unwrap();
    }

    pub fn seed_lamp(&self, name: &str) -> String {
        let id = format!("urn:ngsi-ld:SmartLamp:{name}");
        self.broker
            .create_entity(
                Entity::new(&id, LAMP_TYPE)
                    .with_attr("status", serde_json::json!("on"))
                    .with_attr("consumption", serde_json::json!(12)),
            )
            .unwrap();
        id
    }

    /// Register at the IdP over HTTP and fetch an identity token.
    pub async fn consumer(&self, id: &str) -> Consumer {
        let secret = format!("{id}-secret");
        let resp = self
            .http
            .post(format!("{}/register", self.idp_url))
            .json(&serde_json::json!({ "consumer_id": id, "secret": secret }))
            .send()
            .await
            .unwrap();
        assert!(resp.status().is_success(), "register failed: {}", resp.status());
        let token: IdentityToken = self
            .http
            .post(format!("{}/token", self.idp_url))
            .json(&serde_json::json!({ "consumer_id": id, "secret": secret }))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        Consumer { id: id.to_string(), key: KeyPair::generate(format!("{id}#k1")), token, vc: None }
    }

    /// Trade the identity token for a credential at the given PAP, over HTTP.
    pub async fn issue_vc(&self, consumer: &mut Consumer, pap_idx: usize) {
        let request = IssuanceRequest {
            identity_token: consumer.token.clone(),
            subject_public_key: consumer.key.public_key(),
        };
        let resp = self
            .http
            .post(format!("{}/credentials", self.paps[pap_idx].url))
            .json(&request)
            .send()
            .await
            .unwrap();
        assert!(resp.status().is_success(), "issuance failed: {}", resp.status());
        consumer.vc = Some(resp.json().await.unwrap());
    }

    /// Challenge → presentation → retry, returning the second response.
    pub async fn distributed_request(
        &self,
        consumer: &Consumer,
        method: reqwest::Method,
        path_and_query: &str,
        body: Option<serde_json::Value>,
    ) -> reqwest::Response {
        let challenge = self.challenge(method.clone(), path_and_query, body.clone()).await;
        let vc = consumer.vc.clone().expect("consumer holds a credential");
        let vp = Presentation::create(
            vec![vc],
            &challenge.nonce,
            &challenge.audience,
            epoch_now(),
            &consumer.key,
        )
        .unwrap();
        self.send_presentation(&vp, method, path_and_query, body).await
    }

    /// First leg of the dance: unauthorized request, expect 401 + nonce.
    pub async fn challenge(
        &self,
        method: reqwest::Method,
        path_and_query: &str,
        body: Option<serde_json::Value>,
    ) -> Challenge {
        let mut req = self.http.request(method, format!("{}{}", self.pep_url, path_and_query));
        if let Some(body) = body {
            req = req.json(&body);
        }
        let resp = req.send().await.unwrap();
        assert_eq!(resp.status(), reqwest::StatusCode::UNAUTHORIZED, "expected a challenge");
        resp.json().await.unwrap()
    }

    pub async fn send_presentation(
        &self,
        vp: &Presentation,
        method: reqwest::Method,
        path_and_query: &str,
        body: Option<serde_json::Value>,
    ) -> reqwest::Response {
        let header = b64_encode(&serde_json::to_vec(vp).unwrap());
        let mut req = self
            .http
            .request(method, format!("{}{}", self.pep_url, path_and_query))
            .header(HDR_PRESENTATION, header);
        if let Some(body) = body {
            req = req.json(&body);
        }
        req.send().await.unwrap()
    }

    /// Centralized mode: bearer identity token straight through the proxy.
    pub async fn centralized_request(
        &self,
        consumer: &Consumer,
        method: reqwest::Method,
        path_and_query: &str,
        body: Option<serde_json::Value>,
    ) -> reqwest::Response {
        let header = format!(
            "{BEARER_PREFIX}{}",
            b64_encode(&serde_json::to_vec(&consumer.token).unwrap())
        );
        let mut req = self
            .http
            .request(method, format!("{}{}", self.pep_url, path_and_query))
            .header(HDR_AUTHORIZATION, header);
        if let Some(body) = body {
            req = req.json(&body);
        }
        req.send().await.unwrap()
    }
}

pub struct Consumer {
    pub id: String,
    pub key: KeyPair,
    pub token: IdentityToken,
    pub vc: Option<CapabilityCredential>,
}

/// Local webhook receiver collecting notification bodies.
pub struct WebhookSink {
    pub url: String,
    received: Arc<Mutex<Vec<Notification>>>,
}

impl WebhookSink {
    pub async fn start() -> WebhookSink {
        let received: Arc<Mutex<Vec<Notification>>> = Arc::new(Mutex::new(Vec::new()));
        let sink = received.clone();
        let app = axum::Router::new().route(
            "/notify",
            axum::routing::post(move |axum::Json(body): axum::Json<Notification>| {
                let sink = sink.clone();
                async move {
                    sink.lock().unwrap().push(body);
                    axum::http::StatusCode::NO_CONTENT
                }
            }),
        );
        let (listener, addr) = bind().await;
        serve(listener, app);
        WebhookSink { url: format!("http://{addr}/notify"), received }
    }

    pub fn count(&self) -> usize {
        self.received.lock().unwrap().len()
    }

    pub fn notifications(&self) -> Vec<Notification> {
        self.received.lock().unwrap().clone()
    }
}

/// Poll until the condition holds or the timeout lapses.
pub async fn wait_for(mut condition: impl FnMut() -> bool, timeout: Duration) -> bool {
    let deadline = tokio::time::Instant::now() + timeout;
    loop {
        if condition() {
            return true;
        }
        if tokio::time::Instant::now() >= deadline {
            return false;
        }
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
}

pub fn type_url(s: &str) -> ResourceUrl {
    ResourceUrl::type_url(s).unwrap()
}

pub fn object_url(s: &str) -> ResourceUrl {
    ResourceUrl::object_url(s).unwrap()
}

pub fn attr_url(object: &str, name: &str) -> ResourceUrl {
    ResourceUrl::attr_of(&object_url(object), name).unwrap()
}

pub fn subscription_body(filter_type: &str, endpoint: &str) -> serde_json::Value {
    serde_json::json!({
        "type": "Subscription",
        "entities": [{ "type": filter_type }],
        "notification": { "endpoint": { "uri": endpoint } }
    })
}
