//! Process settings from environment variables, per-run overrides, and the
//! redacted view of a configuration that is safe to hand to clients.
//!
//! Variables: `RP_PROVIDER`, `RP_MODEL`, `RP_API_KEY`, `RP_BASE_URL`,
//! `RP_EMBEDDING_MODE`, `RP_S2_API_KEY`, `RP_DB_PATH`, `RP_PORT`, plus
//! `RP_S2_BASE_URL` and `RP_ARXIV_BASE_URL` for pointing retrieval at a
//! mirror or fixture server.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{EmbeddingMode, Provider, RuntimeConfig, Secret};
use crate::search::{SearchEndpoints, DEFAULT_ARXIV_BASE_URL, DEFAULT_S2_BASE_URL};
use crate::store::DEFAULT_DB_PATH;

pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("invalid value for {var}: {message}")]
    Invalid { var: &'static str, message: String },
    #[error("could not read environment file {path}: {message}")]
    EnvFile { path: String, message: String },
}

pub fn default_model(provider: Provider) -> &'static str {
    match provider {
        Provider::Mock => "mock-1",
        Provider::OpenAiCompatible => "gpt-4o-mini",
        Provider::Anthropic => "claude-3-5-haiku-latest",
    }
}

/// Everything a server or CLI process needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    pub runtime: RuntimeConfig,
    pub s2_api_key: Option<Secret>,
    pub db_path: PathBuf,
    pub port: u16,
    pub s2_base_url: String,
    pub arxiv_base_url: String,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            runtime: RuntimeConfig::default(),
            s2_api_key: None,
            db_path: PathBuf::from(DEFAULT_DB_PATH),
            port: DEFAULT_PORT,
            s2_base_url: DEFAULT_S2_BASE_URL.to_string(),
            arxiv_base_url: DEFAULT_ARXIV_BASE_URL.to_string(),
        }
    }
}

fn nonempty(v: Option<String>) -> Option<String> {
    v.map(|s| s.trim().to_string()).filter(|s| !s.is_empty())
}

impl Settings {
    /// Builds settings from a variable lookup; unset or blank variables
    /// take their defaults.
    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let var = |name: &str| nonempty(get(name));
        let provider = match var("RP_PROVIDER") {
            Some(p) => p
                .parse()
                .map_err(|e: crate::domain::DomainError| ConfigError::Invalid {
                    var: "RP_PROVIDER",
                    message: e.to_string(),
                })?,
            None => Provider::Mock,
        };
        let embedding_mode = match var("RP_EMBEDDING_MODE") {
            Some(m) => m
                .parse()
                .map_err(|e: crate::domain::DomainError| ConfigError::Invalid {
                    var: "RP_EMBEDDING_MODE",
                    message: e.to_string(),
                })?,
            None => EmbeddingMode::Auto,
        };
        let port = match var("RP_PORT") {
            Some(p) => p.parse().map_err(|_| ConfigError::Invalid {
                var: "RP_PORT",
                message: format!("{p:?} is not a port number"),
            })?,
            None => DEFAULT_PORT,
        };
        Ok(Settings {
            runtime: RuntimeConfig {
                provider,
                model: var("RP_MODEL").unwrap_or_else(|| default_model(provider).to_string()),
                api_key: var("RP_API_KEY").map(Secret::new),
                base_url: var("RP_BASE_URL"),
                embedding_mode,
            },
            s2_api_key: var("RP_S2_API_KEY").map(Secret::new),
            db_path: var("RP_DB_PATH")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_DB_PATH)),
            port,
            s2_base_url: var("RP_S2_BASE_URL").unwrap_or_else(|| DEFAULT_S2_BASE_URL.to_string()),
            arxiv_base_url: var("RP_ARXIV_BASE_URL").unwrap_or_else(|| DEFAULT_ARXIV_BASE_URL.to_string()),
        })
    }

    pub fn from_env() -> Result<Self, ConfigError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn search_endpoints(&self) -> SearchEndpoints {
        SearchEndpoints {
            s2_base_url: self.s2_base_url.clone(),
            arxiv_base_url: self.arxiv_base_url.clone(),
            s2_api_key: self.s2_api_key.clone(),
            ..SearchEndpoints::default()
        }
    }

    /// Every secret this process knows about, for output redaction.
    pub fn secrets(&self) -> Vec<Secret> {
        self.runtime.api_key.iter().chain(&self.s2_api_key).cloned().collect()
    }
}

/// Loads `path` into the process environment without overriding variables
/// that are already set. A missing file is not an error.
pub fn load_env_file(path: impl AsRef<Path>) -> Result<bool, ConfigError> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(false);
    }
    dotenvy::from_path(path).map_err(|e| ConfigError::EnvFile {
        path: path.display().to_string(),
        // dotenvy errors quote the offending line, which may hold a key.
        message: match e {
            dotenvy::Error::LineParse(_, idx) => format!("parse error at byte {idx}"),
            dotenvy::Error::Io(io) => io.to_string(),
            _ => "unreadable".to_string(),
        },
    })?;
    Ok(true)
}

/// Field-level overrides for one run. Blank strings count as absent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    #[serde(default)]
    pub provider: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub embedding_mode: Option<String>,
}

impl ConfigOverrides {
    /// Returns `base` with every present override applied.
    pub fn apply(&self, base: &RuntimeConfig) -> Result<RuntimeConfig, ConfigError> {
        let mut cfg = base.clone();
        if let Some(p) = nonempty(self.provider.clone()) {
            cfg.provider = p
                .parse()
                .map_err(|e: crate::domain::DomainError| ConfigError::Invalid {
                    var: "provider",
                    message: e.to_string(),
                })?;
            // A provider switch without an explicit model gets that provider's default.
            if nonempty(self.model.clone()).is_none() && cfg.provider != base.provider {
                cfg.model = default_model(cfg.provider).to_string();
            }
        }
        if let Some(m) = nonempty(self.model.clone()) {
            cfg.model = m;
        }
        if let Some(k) = nonempty(self.api_key.clone()) {
            cfg.api_key = Some(Secret::new(k));
        }
        if let Some(u) = nonempty(self.base_url.clone()) {
            cfg.base_url = Some(u);
        }
        if let Some(m) = nonempty(self.embedding_mode.clone()) {
            cfg.embedding_mode = m
                .parse()
                .map_err(|e: crate::domain::DomainError| ConfigError::Invalid {
                    var: "embedding_mode",
                    message: e.to_string(),
                })?;
        }
        Ok(cfg)
    }

    pub fn api_key(&self) -> Option<Secret> {
        nonempty(self.api_key.clone()).map(Secret::new)
    }
}

/// Client-visible configuration. Holds no secret material.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafeConfig {
    pub provider: String,
    pub model: String,
    pub base_url: Option<String>,
    pub embedding_mode: String,
    pub api_key_set: bool,
}

impl From<&RuntimeConfig> for SafeConfig {
    fn from(cfg: &RuntimeConfig) -> Self {
        SafeConfig {
            provider: cfg.provider.to_string(),
            model: cfg.model.clone(),
            base_url: cfg.base_url.clone(),
            embedding_mode: cfg.embedding_mode.to_string(),
            api_key_set: cfg.api_key.as_ref().is_some_and(|k| !k.expose().is_empty()),
        }
    }
}
