//! Configuration: one TOML file with a section per service plus a `[client]`
//! section for the CLI, and `CAPGATE_<SECTION>_<FIELD>` environment overrides
//! for URLs, identifiers, and keys.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub broker: BrokerSection,
    pub idp: IdpSection,
    pub pap: PapSection,
    pub pdp: PdpSection,
    pub pep: PepSection,
    pub client: ClientSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BrokerSection {
    pub listen: String,
    pub snapshot_path: Option<PathBuf>,
}

impl Default for BrokerSection {
    fn default() -> Self {
        BrokerSection { listen: "127.0.0.1:8080".into(), snapshot_path: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IdpSection {
    pub listen: String,
    pub issuer: String,
    /// base64url 32-byte Ed25519 seed; generated fresh when absent.
    pub key_seed: Option<String>,
    pub token_ttl_secs: u64,
}

impl Default for IdpSection {
    fn default() -> Self {
        IdpSection {
            listen: "127.0.0.1:8081".into(),
            issuer: "idp-1".into(),
            key_seed: None,
            token_ttl_secs: crate::idp::DEFAULT_TOKEN_TTL_SECS,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PapSection {
    pub listen: String,
    pub id: String,
    pub public_url: String,
    pub key_seed: Option<String>,
    pub owner_keys: BTreeMap<String, String>,
    pub pdp_keys: Vec<String>,
    /// IdP issuer → base64url public key.
    pub trusted_idps: BTreeMap<String, String>,
    pub vc_ttl_secs: u64,
    pub status_capacity: u64,
    pub snapshot_path: Option<PathBuf>,
}

impl Default for PapSection {
    fn default() -> Self {
        PapSection {
            listen: "127.0.0.1:8082".into(),
            id: "pap-1".into(),
            public_url: "http://127.0.0.1:8082".into(),
            key_seed: None,
            owner_keys: [("owner".to_string(), "owner-key".to_string())].into(),
            pdp_keys: vec!["pdp-key".into()],
            trusted_idps: BTreeMap::new(),
            vc_ttl_secs: crate::pap::DEFAULT_VC_TTL_SECS,
            status_capacity: crate::pap::DEFAULT_STATUS_CAPACITY,
            snapshot_path: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PdpSection {
    pub listen: String,
    pub broker_url: String,
    /// PAP id → base URL.
    pub pap_urls: BTreeMap<String, String>,
    /// PAP id → base64url public key.
    pub trusted_paps: BTreeMap<String, String>,
    /// IdP issuer → base64url public key.
    pub trusted_idps: BTreeMap<String, String>,
    pub audience: String,
    pub pdp_key: String,
    pub nonce_ttl_secs: u64,
    pub pip_ttl_secs: u64,
    pub freshness_window_secs: u64,
    pub refresh_interval_secs: u64,
    pub sweep_interval_secs: u64,
}

impl Default for PdpSection {
    fn default() -> Self {
        PdpSection {
            listen: "127.0.0.1:8083".into(),
            broker_url: "http://127.0.0.1:8080".into(),
            pap_urls: BTreeMap::new(),
            trusted_paps: BTreeMap::new(),
            trusted_idps: BTreeMap::new(),
            audience: "http://127.0.0.1:8084".into(),
            pdp_key: "pdp-key".into(),
            nonce_ttl_secs: crate::pdp::DEFAULT_NONCE_TTL_SECS,
            pip_ttl_secs: crate::pdp::DEFAULT_PIP_TTL_SECS,
            freshness_window_secs: crate::pdp::DEFAULT_FRESHNESS_WINDOW_SECS,
            refresh_interval_secs: crate::pdp::DEFAULT_REFRESH_INTERVAL.as_secs(),
            sweep_interval_secs: crate::pdp::DEFAULT_SWEEP_INTERVAL.as_secs(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PepSection {
    pub listen: String,
    pub broker_url: String,
    pub pdp_url: String,
    pub public_url: String,
}

impl Default for PepSection {
    fn default() -> Self {
        PepSection {
            listen: "127.0.0.1:8084".into(),
            broker_url: "http://127.0.0.1:8080".into(),
            pdp_url: "http://127.0.0.1:8083".into(),
            public_url: "http://127.0.0.1:8084".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientSection {
    pub idp_url: String,
    pub pap_url: String,
    pub pep_url: String,
    pub consumer_id: Option<String>,
    pub secret: Option<String>,
    pub owner_key: Option<String>,
    pub state_dir: PathBuf,
    /// Base joined onto bare type names in `type:Name` shorthand.
    pub type_base: String,
    /// Base joined onto bare object names in `object:name` shorthand.
    pub entity_base: String,
}

impl Default for ClientSection {
    fn default() -> Self {
        ClientSection {
            idp_url: "http://127.0.0.1:8081".into(),
            pap_url: "http://127.0.0.1:8082".into(),
            pep_url: "http://127.0.0.1:8084".into(),
            consumer_id: None,
            secret: None,
            owner_key: None,
            state_dir: PathBuf::from(".capgate"),
            type_base: "https://ds.example/types".into(),
            entity_base: "urn:ngsi-ld:".into(),
        }
    }
}

impl Config {
    /// Defaults, then the file when given, then environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Config, ConfigError> {
        let mut config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                toml::from_str(&text)?
            }
            None => Config::default(),
        };
        config.apply_env_overrides(|name| std::env::var(name).ok());
        Ok(config)
    }

    /// Override URLs, identifiers, and key material from the environment.
    /// Variables are named `CAPGATE_<SECTION>_<FIELD>`.
    pub fn apply_env_overrides(&mut self, get: impl Fn(&str) -> Option<String>) {
        let set = |name: &str, slot: &mut String| {
            if let Some(v) = get(name) {
                *slot = v;
            }
        };
        set("CAPGATE_BROKER_LISTEN", &mut self.broker.listen);
        set("CAPGATE_IDP_LISTEN", &mut self.idp.listen);
        set("CAPGATE_IDP_ISSUER", &mut self.idp.issuer);
        set("CAPGATE_PAP_LISTEN", &mut self.pap.listen);
        set("CAPGATE_PAP_ID", &mut self.pap.id);
        set("CAPGATE_PAP_PUBLIC_URL", &mut self.pap.public_url);
        set("CAPGATE_PDP_LISTEN", &mut self.pdp.listen);
        set("CAPGATE_PDP_BROKER_URL", &mut self.pdp.broker_url);
        set("CAPGATE_PDP_AUDIENCE", &mut self.pdp.audience);
        set("CAPGATE_PDP_KEY", &mut self.pdp.pdp_key);
        set("CAPGATE_PEP_LISTEN", &mut self.pep.listen);
        set("CAPGATE_PEP_BROKER_URL", &mut self.pep.broker_url);
        set("CAPGATE_PEP_PDP_URL", &mut self.pep.pdp_url);
        set("CAPGATE_PEP_PUBLIC_URL", &mut self.pep.public_url);
        set("CAPGATE_CLIENT_IDP_URL", &mut self.client.idp_url);
        set("CAPGATE_CLIENT_PAP_URL", &mut self.client.pap_url);
        set("CAPGATE_CLIENT_PEP_URL", &mut self.client.pep_url);
        set("CAPGATE_CLIENT_TYPE_BASE", &mut self.client.type_base);
        set("CAPGATE_CLIENT_ENTITY_BASE", &mut self.client.entity_base);
        for (name, slot) in [
            ("CAPGATE_IDP_KEY_SEED", &mut self.idp.key_seed),
            ("CAPGATE_PAP_KEY_SEED", &mut self.pap.key_seed),
            ("CAPGATE_CLIENT_CONSUMER_ID", &mut self.client.consumer_id),
            ("CAPGATE_CLIENT_SECRET", &mut self.client.secret),
            ("CAPGATE_CLIENT_OWNER_KEY", &mut self.client.owner_key),
        ] {
            if let Some(v) = get(name) {
                *slot = Some(v);
            }
        }
        if let Some(v) = get("CAPGATE_CLIENT_STATE_DIR") {
            self.client.state_dir = PathBuf::from(v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_partial_file() {
        let text = r#"
            [pep]
            listen = "0.0.0.0:9999"

            [pdp.pap_urls]
            pap-1 = "http://pap.example"
        "#;
        let config: Config = toml::from_str(text).unwrap();
        assert_eq!(config.pep.listen, "0.0.0.0:9999");
        assert_eq!(config.pdp.pap_urls["pap-1"], "http://pap.example");
        // untouched sections keep defaults
        assert_eq!(config.broker.listen, "127.0.0.1:8080");
    }

    #[test]
    fn env_overrides_urls_and_keys() {
        let mut config = Config::default();
        config.apply_env_overrides(|name| match name {
            "CAPGATE_PEP_BROKER_URL" => Some("http://elsewhere:1".into()),
            "CAPGATE_CLIENT_SECRET" => Some("hunter2".into()),
            _ => None,
        });
        assert_eq!(config.pep.broker_url, "http://elsewhere:1");
        assert_eq!(config.client.secret.as_deref(), Some("hunter2"));
        assert_eq!(config.pep.pdp_url, "http://127.0.0.1:8083");
    }

    #[test]
    fn round_trips_through_toml() {
        let config = Config::default();
        let text = toml::to_string(&config).unwrap();
        let back: Config = toml::from_str(&text).unwrap();
        assert_eq!(back.pap.id, config.pap.id);
        assert_eq!(back.client.state_dir, config.client.state_dir);
    }
}
