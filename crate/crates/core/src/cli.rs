//! The `capgate` command line: consumer and owner workflows, the revocation
//! size measurement, and `serve` for running the services.
//!
//! Consumer commands keep their material in a state directory (`key.json`,
//! `token.json`, `vc.json`). Data-plane commands pick their mode from what is
//! there: with a credential and key they run distributed (bare request →
//! nonce challenge → presentation → retry); with only an identity token they
//! run centralized (bearer header). Every command exits 0 on success, 1 on a
//! protocol failure or deny, 2 on usage or configuration problems.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bench;
use crate::broker::{Broker, SubscriptionRequest};
use crate::config::{ClientSection, Config};
use crate::credential::{
    CapabilityCredential, IdentityToken, KeyPair, Presentation, PublicKey, StatusList,
    TrustedIssuers,
};
use crate::idp::Idp;
use crate::pap::{IssuanceRequest, Pap, PapConfig, RevocationRequest};
use crate::pdp::{Pdp, PdpConfig};
use crate::pep::{Pep, PepConfig};
use crate::policy::{Operation, Policy, ResourceUrl, UrlKind};
use crate::serve::{serve_blocking, spawn_router};
use crate::wire::{
    b64_encode, epoch_now, percent_encode, Challenge, BEARER_PREFIX, HDR_AUTHORIZATION,
    HDR_OWNER_KEY, HDR_PRESENTATION,
};

#[derive(Parser)]
#[command(name = "capgate", version, about = "Capability-gated access to NGSI-LD data spaces")]
pub struct Cli {
    /// Path to the TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Emit machine-readable JSON instead of human lines.
    #[arg(long, global = true)]
    json: bool,
    /// Where consumer state (key, token, credential) lives.
    #[arg(long, global = true)]
    state_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a consumer signing key.
    Keygen {
        #[arg(long, default_value = "consumer#k1")]
        key_id: String,
        /// Write the key here instead of the state directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Register a consumer at the identity provider.
    Register {
        #[arg(long)]
        consumer: Option<String>,
        #[arg(long)]
        secret: Option<String>,
    },
    /// Obtain an identity token and store it.
    Token {
        #[arg(long)]
        consumer: Option<String>,
        #[arg(long)]
        secret: Option<String>,
    },
    /// Trade the identity token for a capability credential.
    GetVc,
    /// Read an entity, selected attributes, or all entities of a type.
    Read {
        #[arg(long)]
        entity: Option<String>,
        /// Comma-separated attribute names.
        #[arg(long)]
        attrs: Option<String>,
        #[arg(long = "type")]
        entity_type: Option<String>,
    },
    /// Write one attribute, or create an entity from a JSON file.
    Write {
        #[arg(long)]
        entity: Option<String>,
        #[arg(long)]
        attr: Option<String>,
        /// JSON literal; bare words become strings.
        #[arg(long)]
        value: Option<String>,
        /// JSON file with the entity to create.
        #[arg(long)]
        create: Option<PathBuf>,
    },
    /// Subscribe to changes on a type or an entity.
    Subscribe {
        #[arg(long = "type")]
        entity_type: Option<String>,
        #[arg(long)]
        entity: Option<String>,
        /// Webhook URL notifications go to.
        #[arg(long)]
        endpoint: Option<String>,
        /// Comma-separated attribute names to watch.
        #[arg(long)]
        watch: Option<String>,
        /// Run a local webhook listener and print notifications until
        /// interrupted.
        #[arg(long)]
        listen: bool,
    },
    /// Delete a subscription.
    Unsubscribe {
        #[arg(long)]
        id: String,
    },
    /// Owner policy administration.
    Policy {
        #[command(subcommand)]
        command: PolicyCommand,
    },
    /// Revoke credentials at the PAP.
    Revoke {
        #[arg(long)]
        consumer: Option<String>,
        #[arg(long)]
        index: Option<u64>,
        #[arg(long)]
        generation: Option<u32>,
    },
    /// Status-list inspection.
    StatusList {
        #[command(subcommand)]
        command: StatusListCommand,
    },
    /// Measure compressed revocation-list size across densities.
    BenchRevocation {
        #[arg(long, default_value_t = 1_000_000)]
        bits: u64,
        /// Comma-separated fractions, e.g. 0.0001,0.001,0.01,0.1,0.5
        #[arg(long, default_value = "0.0001,0.001,0.01,0.1,0.5")]
        densities: String,
        #[arg(long, default_value_t = 5)]
        seeds: u32,
        /// Also write the CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one service, or the whole stack in one process.
    Serve {
        #[arg(value_enum)]
        service: ServeTarget,
    },
}

#[derive(Subcommand)]
enum PolicyCommand {
    /// `policy put <consumer> <operation> <kind:url>`
    Put {
        consumer: String,
        operation: String,
        /// `type:URL`, `object:URL`, or `attribute:URL`; bare names are
        /// joined onto the configured bases.
        resource: String,
    },
    List {
        #[arg(long)]
        consumer: String,
    },
    Delete {
        id: String,
    },
}

#[derive(Subcommand)]
enum StatusListCommand {
    /// Fetch, verify, and summarize the current list.
    Show,
}

#[derive(Clone, Copy, ValueEnum)]
enum ServeTarget {
    Broker,
    Idp,
    Pap,
    Pdp,
    Pep,
    All,
}

struct CliError {
    message: String,
    code: u8,
}

impl CliError {
    fn protocol(message: impl Into<String>) -> Self {
        CliError { message: message.into(), code: 1 }
    }

    fn usage(message: impl Into<String>) -> Self {
        CliError { message: message.into(), code: 2 }
    }
}

pub async fn run() -> ExitCode {
    let cli = Cli::parse();
    let config = match Config::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("capgate: {e}");
            return ExitCode::from(2);
        }
    };
    let ctx = Ctx {
        http: reqwest::Client::new(),
        state_dir: cli.state_dir.unwrap_or_else(|| config.client.state_dir.clone()),
        config,
        json: cli.json,
    };
    match dispatch(cli.command, &ctx).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("capgate: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

struct Ctx {
    config: Config,
    http: reqwest::Client,
    state_dir: PathBuf,
    json: bool,
}

#[derive(Serialize, Deserialize)]
struct KeyFile {
    key_id: String,
    public_key: String,
    private_seed: String,
}

impl Ctx {
    fn emit(&self, human: impl Display, machine: Value) {
        if self.json {
            println!("{}", serde_json::to_string_pretty(&machine).unwrap_or_default());
        } else {
            println!("{human}");
        }
    }

    fn client(&self) -> &ClientSection {
        &self.config.client
    }

    fn state_path(&self, name: &str) -> PathBuf {
        self.state_dir.join(name)
    }

    fn save_state(&self, name: &str, value: &impl Serialize) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.state_dir)
            .map_err(|e| CliError::usage(format!("state dir: {e}")))?;
        let path = self.state_path(name);
        let bytes = serde_json::to_vec_pretty(value).expect("state serializes");
        std::fs::write(&path, bytes).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    fn load_state<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<T, CliError> {
        let path = self.state_path(name);
        let bytes = std::fs::read(&path).map_err(|e| {
            CliError::usage(format!("{} (run the earlier flow steps first): {e}", path.display()))
        })?;
        serde_json::from_slice(&bytes)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    fn load_keypair(&self) -> Result<KeyPair, CliError> {
        let file: KeyFile = self.load_state("key.json")?;
        KeyPair::from_seed_b64(&file.private_seed, file.key_id)
            .map_err(|e| CliError::usage(format!("key.json: {e}")))
    }

    fn consumer_and_secret(
        &self,
        consumer: Option<String>,
        secret: Option<String>,
    ) -> Result<(String, String), CliError> {
        let consumer = consumer
            .or_else(|| self.client().consumer_id.clone())
            .ok_or_else(|| CliError::usage("pass --consumer or set client.consumer_id"))?;
        let secret = secret
            .or_else(|| self.client().secret.clone())
            .ok_or_else(|| CliError::usage("pass --secret or set client.secret"))?;
        Ok((consumer, secret))
    }

    fn owner_key(&self) -> Result<String, CliError> {
        self.client()
            .owner_key
            .clone()
            .ok_or_else(|| CliError::usage("set client.owner_key for admin commands"))
    }

    /// Send an NGSI-LD request through the enforcement proxy, handling the
    /// challenge → presentation → retry dance when a credential is on disk.
    async fn ngsi(
        &self,
        method: reqwest::Method,
        path_and_query: &str,
        body: Option<Value>,
    ) -> Result<reqwest::Response, CliError> {
        let url = format!("{}{}", self.client().pep_url.trim_end_matches('/'), path_and_query);
        let vc: Result<CapabilityCredential, _> = self.load_state("vc.json");
        if let Ok(vc) = vc {
            let key = self.load_keypair()?;
            let first = self.request(method.clone(), &url, body.clone(), None).await?;
            if first.status() != reqwest::StatusCode::UNAUTHORIZED {
                return Ok(first);
            }
            let challenge: Challenge = first
                .json()
                .await
                .map_err(|e| CliError::protocol(format!("malformed challenge: {e}")))?;
            let vp = Presentation::create(
                vec![vc],
                &challenge.nonce,
                &challenge.audience,
                epoch_now(),
                &key,
            )
            .map_err(|e| CliError::protocol(e.to_string()))?;
            let header = b64_encode(&serde_json::to_vec(&vp).expect("vp serializes"));
            return self.request(method, &url, body, Some((HDR_PRESENTATION, header))).await;
        }
        let token: Result<IdentityToken, _> = self.load_state("token.json");
        if let Ok(token) = token {
            let header = format!(
                "{BEARER_PREFIX}{}",
                b64_encode(&serde_json::to_vec(&token).expect("token serializes"))
            );
            return self.request(method, &url, body, Some((HDR_AUTHORIZATION, header))).await;
        }
        self.request(method, &url, body, None).await
    }

    async fn request(
        &self,
        method: reqwest::Method,
        url: &str,
        body: Option<Value>,
        header: Option<(&str, String)>,
    ) -> Result<reqwest::Response, CliError> {
        let mut req = self.http.request(method, url);
        if let Some(body) = body {
            req = req.json(&body);
        }
        if let Some((name, value)) = header {
            req = req.header(name, value);
        }
        req.send().await.map_err(|e| CliError::protocol(format!("{url}: {e}")))
    }
}

/// Turn a `(status, body)` pair into success JSON or a protocol error
/// carrying the server's deny reason.
async fn expect_success(resp: reqwest::Response) -> Result<Value, CliError> {
    let status = resp.status();
    let body: Value = resp.json().await.unwrap_or(Value::Null);
    if status.is_success() {
        return Ok(body);
    }
    let reason = body
        .get("reason")
        .or_else(|| body.get("error"))
        .and_then(|v| v.as_str())
        .unwrap_or("request failed");
    Err(CliError::protocol(format!("{status}: {reason}")))
}

fn parse_operation(s: &str) -> Result<Operation, CliError> {
    s.parse::<Operation>().map_err(|e| CliError::usage(e.to_string()))
}

/// `kind:value` with base expansion for bare names.
fn parse_resource(arg: &str, client: &ClientSection) -> Result<ResourceUrl, CliError> {
    let (kind_str, rest) = arg
        .split_once(':')
        .ok_or_else(|| CliError::usage(format!("resource {arg:?} is not kind:url")))?;
    let kind = match kind_str {
        "type" => UrlKind::Type,
        "object" => UrlKind::Object,
        "attribute" | "attr" => UrlKind::Attribute,
        other => return Err(CliError::usage(format!("unknown resource kind {other:?}"))),
    };
    let value = expand(kind, rest, client);
    ResourceUrl::new(kind, value).map_err(|e| CliError::usage(e.to_string()))
}

fn expand(kind: UrlKind, raw: &str, client: &ClientSection) -> String {
    if ResourceUrl::new(UrlKind::Object, raw).is_ok() {
        return raw.to_string();
    }
    let base = match kind {
        UrlKind::Type => &client.type_base,
        UrlKind::Object | UrlKind::Attribute => &client.entity_base,
    };
    join_base(base, raw)
}

fn join_base(base: &str, rest: &str) -> String {
    if base.ends_with(':') || base.ends_with('/') {
        format!("{base}{rest}")
    } else {
        format!("{base}/{rest}")
    }
}

fn expand_entity(raw: &str, client: &ClientSection) -> String {
    expand(UrlKind::Object, raw, client)
}

fn expand_type(raw: &str, client: &ClientSection) -> String {
    expand(UrlKind::Type, raw, client)
}

async fn dispatch(command: Command, ctx: &Ctx) -> Result<(), CliError> {
    match command {
        Command::Keygen { key_id, out } => {
            let key = KeyPair::generate(&key_id);
            let file = KeyFile {
                key_id: key_id.clone(),
                public_key: key.public_key().to_b64(),
                private_seed: key.seed_b64(),
            };
            let path = match out {
                Some(path) => {
                    std::fs::write(&path, serde_json::to_vec_pretty(&file).unwrap())
                        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
                    path
                }
                None => ctx.save_state("key.json", &file)?,
            };
            ctx.emit(
                format!("wrote {} (public key {})", path.display(), file.public_key),
                json!({ "path": path, "public_key": file.public_key, "key_id": key_id }),
            );
            Ok(())
        }

        Command::Register { consumer, secret } => {
            let (consumer, secret) = ctx.consumer_and_secret(consumer, secret)?;
            let url = format!("{}/register", ctx.client().idp_url.trim_end_matches('/'));
            let resp = ctx
                .http
                .post(&url)
                .json(&json!({ "consumer_id": consumer, "secret": secret }))
                .send()
                .await
                .map_err(|e| CliError::protocol(e.to_string()))?;
            expect_success(resp).await?;
            ctx.emit(format!("registered {consumer}"), json!({ "consumer_id": consumer }));
            Ok(())
        }

        Command::Token { consumer, secret } => {
            let (consumer, secret) = ctx.consumer_and_secret(consumer, secret)?;
            let url = format!("{}/token", ctx.client().idp_url.trim_end_matches('/'));
            let resp = ctx
                .http
                .post(&url)
                .json(&json!({ "consumer_id": consumer, "secret": secret }))
                .send()
                .await
                .map_err(|e| CliError::protocol(e.to_string()))?;
            let body = expect_success(resp).await?;
            let token: IdentityToken = serde_json::from_value(body.clone())
                .map_err(|e| CliError::protocol(format!("malformed token: {e}")))?;
            let path = ctx.save_state("token.json", &token)?;
            ctx.emit(
                format!(
                    "identity token for {} valid until {} saved to {}",
                    token.consumer_id,
                    token.expires_at,
                    path.display()
                ),
                body,
            );
            Ok(())
        }

        Command::GetVc => {
            let token: IdentityToken = ctx.load_state("token.json")?;
            let key = ctx.load_keypair()?;
            let url = format!("{}/credentials", ctx.client().pap_url.trim_end_matches('/'));
            let request =
                IssuanceRequest { identity_token: token, subject_public_key: key.public_key() };
            let resp = ctx
                .http
                .post(&url)
                .json(&request)
                .send()
                .await
                .map_err(|e| CliError::protocol(e.to_string()))?;
            let body = expect_success(resp).await?;
            let vc: CapabilityCredential = serde_json::from_value(body.clone())
                .map_err(|e| CliError::protocol(format!("malformed credential: {e}")))?;
            let path = ctx.save_state("vc.json", &vc)?;
            ctx.emit(
                format!(
                    "credential from {} with {} capabilities (status bit {} at {}) saved to {}",
                    vc.issuer,
                    vc.capabilities.len(),
                    vc.credential_status.status_index,
                    vc.credential_status.status_list_url,
                    path.display()
                ),
                body,
            );
            Ok(())
        }

        Command::Read { entity, attrs, entity_type } => {
            let path = match (&entity, &entity_type) {
                (Some(id), None) => {
                    let id = expand_entity(id, ctx.client());
                    match &attrs {
                        Some(attrs) => format!(
                            "/ngsi-ld/v1/entities/{}?attrs={}",
                            percent_encode(&id),
                            attrs
                        ),
                        None => format!("/ngsi-ld/v1/entities/{}", percent_encode(&id)),
                    }
                }
                (None, Some(t)) => {
                    let t = expand_type(t, ctx.client());
                    format!("/ngsi-ld/v1/entities?type={}", percent_encode(&t))
                }
                _ => return Err(CliError::usage("pass exactly one of --entity or --type")),
            };
            let resp = ctx.ngsi(reqwest::Method::GET, &path, None).await?;
            let body = expect_success(resp).await?;
            ctx.emit(serde_json::to_string_pretty(&body).unwrap_or_default(), body);
            Ok(())
        }

        Command::Write { entity, attr, value, create } => {
            match (create, entity, attr, value) {
                (Some(file), None, None, None) => {
                    let text = std::fs::read_to_string(&file)
                        .map_err(|e| CliError::usage(format!("{}: {e}", file.display())))?;
                    let doc: Value = serde_json::from_str(&text)
                        .map_err(|e| CliError::usage(format!("{}: {e}", file.display())))?;
                    let resp =
                        ctx.ngsi(reqwest::Method::POST, "/ngsi-ld/v1/entities", Some(doc)).await?;
                    let body = expect_success(resp).await?;
                    ctx.emit(
                        format!("created {}", body.get("id").and_then(|v| v.as_str()).unwrap_or("?")),
                        body,
                    );
                }
                (None, Some(entity), Some(attr), Some(value)) => {
                    let id = expand_entity(&entity, ctx.client());
                    let parsed: Value = serde_json::from_str(&value)
                        .unwrap_or_else(|_| Value::String(value.clone()));
                    let path = format!(
                        "/ngsi-ld/v1/entities/{}/attrs/{}",
                        percent_encode(&id),
                        percent_encode(&attr)
                    );
                    let resp = ctx.ngsi(reqwest::Method::PATCH, &path, Some(parsed)).await?;
                    expect_success(resp).await?;
                    ctx.emit(format!("updated {id} {attr}"), json!({ "id": id, "attr": attr }));
                }
                _ => {
                    return Err(CliError::usage(
                        "pass either --create FILE or --entity --attr --value",
                    ))
                }
            }
            Ok(())
        }

        Command::Subscribe { entity_type, entity, endpoint, watch, listen } => {
            let (endpoint_url, mut receiver) = match (&endpoint, listen) {
                (Some(url), false) => (url.clone(), None),
                (None, true) => {
                    let (addr, rx) = spawn_notification_listener().await?;
                    (format!("http://{addr}/notify"), Some(rx))
                }
                _ => return Err(CliError::usage("pass exactly one of --endpoint or --listen")),
            };
            let mut request = match (&entity_type, &entity) {
                (Some(t), None) => SubscriptionRequest::for_type(
                    &expand_type(t, ctx.client()),
                    &endpoint_url,
                ),
                (None, Some(id)) => SubscriptionRequest::for_object(
                    &expand_entity(id, ctx.client()),
                    &endpoint_url,
                ),
                _ => return Err(CliError::usage("pass exactly one of --type or --entity")),
            };
            if let Some(watch) = watch {
                request = request.watching(watch.split(',').map(str::to_string));
            }
            let body = serde_json::to_value(&request).expect("subscription serializes");
            let resp =
                ctx.ngsi(reqwest::Method::POST, "/ngsi-ld/v1/subscriptions", Some(body)).await?;
            let body = expect_success(resp).await?;
            let sub_id = body.get("id").and_then(|v| v.as_str()).unwrap_or("?").to_string();
            ctx.emit(format!("subscribed: {sub_id}"), body);
            if let Some(rx) = receiver.as_mut() {
                eprintln!("listening for notifications on {endpoint_url}; ctrl-c to stop");
                loop {
                    tokio::select! {
                        Some(notification) = rx.recv() => {
                            println!("{}", serde_json::to_string(&notification).unwrap_or_default());
                        }
                        _ = tokio::signal::ctrl_c() => break,
                    }
                }
            }
            Ok(())
        }

        Command::Unsubscribe { id } => {
            let path = format!("/ngsi-ld/v1/subscriptions/{}", percent_encode(&id));
            let resp = ctx.ngsi(reqwest::Method::DELETE, &path, None).await?;
            expect_success(resp).await?;
            ctx.emit(format!("unsubscribed {id}"), json!({ "id": id }));
            Ok(())
        }

        Command::Policy { command } => policy_command(command, ctx).await,

        Command::Revoke { consumer, index, generation } => {
            let request = RevocationRequest { consumer_id: consumer, generation, status_index: index };
            let url = format!("{}/revocations", ctx.client().pap_url.trim_end_matches('/'));
            let resp = ctx
                .http
                .post(&url)
                .header(HDR_OWNER_KEY, ctx.owner_key()?)
                .json(&request)
                .send()
                .await
                .map_err(|e| CliError::protocol(e.to_string()))?;
            let body = expect_success(resp).await?;
            ctx.emit(
                format!(
                    "revoked ({} bit(s) set)",
                    body.get("revoked_bits").and_then(|v| v.as_u64()).unwrap_or(0)
                ),
                body,
            );
            Ok(())
        }

        Command::StatusList { command: StatusListCommand::Show } => {
            let url = format!("{}/status-list", ctx.client().pap_url.trim_end_matches('/'));
            let resp = ctx.http.get(&url).send().await.map_err(|e| CliError::protocol(e.to_string()))?;
            let body = expect_success(resp).await?;
            let list: StatusList = serde_json::from_value(body.clone())
                .map_err(|e| CliError::protocol(format!("malformed status list: {e}")))?;
            let bits = list.decode().map_err(|e| CliError::protocol(e.to_string()))?;
            ctx.emit(
                format!(
                    "issuer {} issued_at {} bits {} set {} unset {}",
                    list.issuer,
                    list.issued_at,
                    bits.bit_count(),
                    bits.count_set(),
                    bits.bit_count() - bits.count_set()
                ),
                json!({
                    "issuer": list.issuer,
                    "issued_at": list.issued_at,
                    "bit_count": bits.bit_count(),
                    "set": bits.count_set(),
                    "unset": bits.bit_count() - bits.count_set(),
                }),
            );
            Ok(())
        }

        Command::BenchRevocation { bits, densities, seeds, out } => {
            let densities: Vec<f64> = densities
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::usage(format!("densities: {e}")))?;
            if densities.iter().any(|d| !(0.0..=1.0).contains(d)) {
                return Err(CliError::usage("densities must be fractions in [0, 1]"));
            }
            let rows = bench::revocation_size_bench(bits, &densities, seeds);
            let mut csv = String::from(bench::CSV_HEADER);
            csv.push('\n');
            for row in &rows {
                csv.push_str(&row.csv_line());
                csv.push('\n');
            }
            if let Some(path) = out {
                std::fs::write(&path, &csv)
                    .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            }
            if ctx.json {
                let rows_json: Vec<Value> = rows
                    .iter()
                    .map(|r| {
                        json!({
                            "density": r.density,
                            "raw_bytes": r.raw_bytes,
                            "compressed_bytes_mean": r.compressed_mean,
                            "compressed_bytes_stddev": r.compressed_stddev,
                        })
                    })
                    .collect();
                println!("{}", serde_json::to_string_pretty(&rows_json).unwrap());
            } else {
                print!("{csv}");
            }
            bench::check_monotonic(&rows).map_err(CliError::protocol)?;
            Ok(())
        }

        Command::Serve { service } => serve(service, ctx).await,
    }
}

async fn policy_command(command: PolicyCommand, ctx: &Ctx) -> Result<(), CliError> {
    let base = ctx.client().pap_url.trim_end_matches('/').to_string();
    match command {
        PolicyCommand::Put { consumer, operation, resource } => {
            let policy = Policy::new(
                consumer,
                parse_operation(&operation)?,
                parse_resource(&resource, ctx.client())?,
            )
            .map_err(|e| CliError::usage(e.to_string()))?;
            let resp = ctx
                .http
                .put(format!("{base}/policies"))
                .header(HDR_OWNER_KEY, ctx.owner_key()?)
                .json(&policy)
                .send()
                .await
                .map_err(|e| CliError::protocol(e.to_string()))?;
            let body = expect_success(resp).await?;
            ctx.emit(
                format!("policy {}", body.get("id").and_then(|v| v.as_str()).unwrap_or("?")),
                body,
            );
        }
        PolicyCommand::List { consumer } => {
            let resp = ctx
                .http
                .get(format!("{base}/policies?consumer_id={}", percent_encode(&consumer)))
                .header(HDR_OWNER_KEY, ctx.owner_key()?)
                .send()
                .await
                .map_err(|e| CliError::protocol(e.to_string()))?;
            let body = expect_success(resp).await?;
            ctx.emit(serde_json::to_string_pretty(&body).unwrap_or_default(), body);
        }
        PolicyCommand::Delete { id } => {
            let resp = ctx
                .http
                .delete(format!("{base}/policies/{}", percent_encode(&id)))
                .header(HDR_OWNER_KEY, ctx.owner_key()?)
                .send()
                .await
                .map_err(|e| CliError::protocol(e.to_string()))?;
            expect_success(resp).await?;
            ctx.emit(format!("deleted {id}"), json!({ "id": id }));
        }
    }
    Ok(())
}

async fn spawn_notification_listener(
) -> Result<(std::net::SocketAddr, tokio::sync::mpsc::Receiver<Value>), CliError> {
    use axum::routing::post;
    let (tx, rx) = tokio::sync::mpsc::channel::<Value>(64);
    let app = axum::Router::new().route(
        "/notify",
        post(move |axum::Json(body): axum::Json<Value>| {
            let tx = tx.clone();
            async move {
                tx.send(body).await.ok();
                axum::http::StatusCode::NO_CONTENT
            }
        }),
    );
    let (addr, _handle) = spawn_router("127.0.0.1:0".parse().unwrap(), app)
        .await
        .map_err(|e| CliError::protocol(format!("webhook listener: {e}")))?;
    Ok((addr, rx))
}

// ---- serve -----------------------------------------------------------------

fn parse_listen(listen: &str) -> Result<std::net::SocketAddr, CliError> {
    listen.parse().map_err(|e| CliError::usage(format!("listen address {listen:?}: {e}")))
}

fn keypair_from(seed: &Option<String>, key_id: &str) -> Result<KeyPair, CliError> {
    match seed {
        Some(seed) => KeyPair::from_seed_b64(seed, key_id)
            .map_err(|e| CliError::usage(format!("key seed: {e}"))),
        None => Ok(KeyPair::generate(key_id)),
    }
}

fn trusted_from(map: &BTreeMap<String, String>) -> Result<TrustedIssuers, CliError> {
    let mut trusted = TrustedIssuers::new();
    for (id, key_b64) in map {
        let key = PublicKey::from_b64(key_b64)
            .map_err(|e| CliError::usage(format!("public key for {id:?}: {e}")))?;
        trusted.insert(id, key);
    }
    Ok(trusted)
}

fn build_idp(config: &Config) -> Result<Arc<Idp>, CliError> {
    let key = keypair_from(&config.idp.key_seed, &format!("{}#k1", config.idp.issuer))?;
    Ok(Idp::with_token_ttl(&config.idp.issuer, key, config.idp.token_ttl_secs))
}

fn build_pap(config: &Config, trusted_idps: TrustedIssuers) -> Result<Arc<Pap>, CliError> {
    let key = keypair_from(&config.pap.key_seed, &format!("{}#k1", config.pap.id))?;
    let section = &config.pap;
    let cfg = PapConfig {
        id: section.id.clone(),
        public_url: section.public_url.clone(),
        owner_keys: section.owner_keys.clone(),
        pdp_keys: section.pdp_keys.clone(),
        trusted_idps,
        vc_ttl_secs: section.vc_ttl_secs,
        status_capacity: section.status_capacity,
        snapshot_path: section.snapshot_path.clone(),
    };
    Ok(Pap::new(cfg, key))
}

fn build_pdp(
    config: &Config,
    trusted_paps: TrustedIssuers,
    trusted_idps: TrustedIssuers,
    pap_urls: BTreeMap<String, String>,
) -> Arc<Pdp> {
    let section = &config.pdp;
    Pdp::new(PdpConfig {
        broker_url: section.broker_url.clone(),
        pap_urls,
        trusted_paps,
        trusted_idps,
        audience: section.audience.clone(),
        pdp_key: section.pdp_key.clone(),
        nonce_ttl_secs: section.nonce_ttl_secs,
        pip_ttl_secs: section.pip_ttl_secs,
        freshness_window_secs: section.freshness_window_secs,
        refresh_interval: std::time::Duration::from_secs(section.refresh_interval_secs.max(1)),
        sweep_interval: std::time::Duration::from_secs(section.sweep_interval_secs.max(1)),
    })
}

async fn serve(target: ServeTarget, ctx: &Ctx) -> Result<(), CliError> {
    let config = &ctx.config;
    match target {
        ServeTarget::Broker => {
            let broker = Broker::with_snapshot(config.broker.snapshot_path.clone());
            serve_blocking(parse_listen(&config.broker.listen)?, crate::broker::router(broker))
                .await
                .map_err(|e| CliError::protocol(e.to_string()))
        }
        ServeTarget::Idp => {
            let idp = build_idp(config)?;
            eprintln!("idp {} public key: {}", idp.issuer(), idp.public_key());
            serve_blocking(parse_listen(&config.idp.listen)?, crate::idp::router(idp))
                .await
                .map_err(|e| CliError::protocol(e.to_string()))
        }
        ServeTarget::Pap => {
            let pap = build_pap(config, trusted_from(&config.pap.trusted_idps)?)?;
            eprintln!("pap {} public key: {}", pap.id(), pap.public_key());
            serve_blocking(parse_listen(&config.pap.listen)?, crate::pap::router(pap))
                .await
                .map_err(|e| CliError::protocol(e.to_string()))
        }
        ServeTarget::Pdp => {
            let pdp = build_pdp(
                config,
                trusted_from(&config.pdp.trusted_paps)?,
                trusted_from(&config.pdp.trusted_idps)?,
                config.pdp.pap_urls.clone(),
            );
            let _background = pdp.spawn_background();
            serve_blocking(parse_listen(&config.pdp.listen)?, crate::pdp::router(pdp))
                .await
                .map_err(|e| CliError::protocol(e.to_string()))
        }
        ServeTarget::Pep => {
            let pep = Pep::new(PepConfig {
                broker_url: config.pep.broker_url.clone(),
                pdp_url: config.pep.pdp_url.clone(),
                public_url: config.pep.public_url.clone(),
            });
            serve_blocking(parse_listen(&config.pep.listen)?, crate::pep::router(pep))
                .await
                .map_err(|e| CliError::protocol(e.to_string()))
        }
        ServeTarget::All => serve_all(config).await,
    }
}

/// Run the whole stack in one process. Trust that is not spelled out in the
/// config is wired to the in-process keys, so a default config is a working
/// playground.
async fn serve_all(config: &Config) -> Result<(), CliError> {
    let broker = Broker::with_snapshot(config.broker.snapshot_path.clone());
    let idp = build_idp(config)?;

    let mut pap_trusted_idps = trusted_from(&config.pap.trusted_idps)?;
    if config.pap.trusted_idps.is_empty() {
        pap_trusted_idps.insert(idp.issuer(), idp.public_key());
    }
    let pap = build_pap(config, pap_trusted_idps)?;

    let mut pdp_trusted_paps = trusted_from(&config.pdp.trusted_paps)?;
    if config.pdp.trusted_paps.is_empty() {
        pdp_trusted_paps.insert(pap.id(), pap.public_key());
    }
    let mut pdp_trusted_idps = trusted_from(&config.pdp.trusted_idps)?;
    if config.pdp.trusted_idps.is_empty() {
        pdp_trusted_idps.insert(idp.issuer(), idp.public_key());
    }
    let mut pap_urls = config.pdp.pap_urls.clone();
    if pap_urls.is_empty() {
        pap_urls.insert(pap.id().to_string(), format!("http://{}", config.pap.listen));
    }
    let pdp = build_pdp(config, pdp_trusted_paps, pdp_trusted_idps, pap_urls);
    let _background = pdp.spawn_background();

    let pep = Pep::new(PepConfig {
        broker_url: config.pep.broker_url.clone(),
        pdp_url: config.pep.pdp_url.clone(),
        public_url: config.pep.public_url.clone(),
    });

    let services: Vec<(&str, std::net::SocketAddr, axum::Router)> = vec![
        ("broker", parse_listen(&config.broker.listen)?, crate::broker::router(broker)),
        ("idp", parse_listen(&config.idp.listen)?, crate::idp::router(idp.clone())),
        ("pap", parse_listen(&config.pap.listen)?, crate::pap::router(pap.clone())),
        ("pdp", parse_listen(&config.pdp.listen)?, crate::pdp::router(pdp)),
        ("pep", parse_listen(&config.pep.listen)?, crate::pep::router(pep)),
    ];
    for (name, addr, router) in services {
        let (bound, _handle) =
            spawn_router(addr, router).await.map_err(|e| CliError::protocol(e.to_string()))?;
        eprintln!("{name} listening on {bound}");
    }
    eprintln!("idp {} public key: {}", idp.issuer(), idp.public_key());
    eprintln!("pap {} public key: {}", pap.id(), pap.public_key());
    eprintln!("ctrl-c to stop");
    tokio::signal::ctrl_c().await.ok();
    Ok(())
}
