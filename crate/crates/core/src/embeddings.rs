//! Text vectors under the remote / local / auto embedding policy.
//!
//! The local backend is a feature-hashing embedder: each lowercase
//! alphanumeric token is hashed with FNV-1a 64, the hash picks a bucket
//! (`h mod 384`) and a sign (bit 63), and the bucket counts are
//! L2-normalized. It is fully deterministic across processes and platforms.
//! Remote vectors of any width are cut or zero-padded to the same 384
//! dimensions so every stored vector lives in one space.

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::domain::{redact, tokenize, EmbeddingMode, Provider, RuntimeConfig};

pub const EMBEDDING_DIM: usize = 384;
pub const DEFAULT_REMOTE_MODEL: &str = "text-embedding-3-small";
const REMOTE_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Remote,
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f32>,
    pub provenance: Provenance,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EmbeddingError {
    #[error("remote embeddings not configured")]
    RemoteNotConfigured,
    #[error("embedding unavailable: {0}")]
    Unavailable(String),
}

/// Resolves the configured mode against whether a remote backend exists.
pub fn select_mode(mode: EmbeddingMode, remote_available: bool) -> Result<Provenance, EmbeddingError> {
    match (mode, remote_available) {
        (EmbeddingMode::Remote, true) | (EmbeddingMode::Auto, true) => Ok(Provenance::Remote),
        (EmbeddingMode::Remote, false) => Err(EmbeddingError::RemoteNotConfigured),
        (EmbeddingMode::Local, _) | (EmbeddingMode::Auto, false) => Ok(Provenance::Local),
    }
}

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(PRIME))
}

pub fn embed_local(text: &str) -> Embedding {
    let mut acc = [0i64; EMBEDDING_DIM];
    for token in tokenize(text) {
        let h = fnv1a64(token.as_bytes());
        let idx = (h % EMBEDDING_DIM as u64) as usize;
        acc[idx] += if h >> 63 == 0 { 1 } else { -1 };
    }
    let raw: Vec<f64> = acc.iter().map(|&v| v as f64).collect();
    Embedding {
        vector: l2_normalize(&raw),
        provenance: Provenance::Local,
    }
}

/// Normalizes in f64 and narrows to f32. A zero vector stays zero.
pub fn l2_normalize(v: &[f64]) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x / norm) as f32).collect()
}

/// Fits a provider vector into [`EMBEDDING_DIM`]. Vectors that already have
/// the right width pass through untouched.
pub fn fit_dimension(v: Vec<f64>) -> Vec<f32> {
    if v.len() == EMBEDDING_DIM {
        return v.into_iter().map(|x| x as f32).collect();
    }
    let mut fitted = v;
    fitted.resize(EMBEDDING_DIM, 0.0);
    l2_normalize(&fitted)
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Anything that can turn text into an [`Embedding`].
#[async_trait]
pub trait TextEmbedder: Send + Sync {
    async fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError>;
}

/// Applies the embedding-mode policy of a [`RuntimeConfig`].
///
/// Remote is considered available when the provider speaks the
/// OpenAI-compatible wire format and both a base URL and an API key are
/// set. Under `auto`, a failing remote call falls back to the local
/// embedder; under `remote` it is an error.
#[derive(Debug, Clone)]
pub struct Embedder {
    config: RuntimeConfig,
    model: String,
    http: reqwest::Client,
}

impl Embedder {
    pub fn new(config: RuntimeConfig) -> Self {
        let http = reqwest::Client::builder()
            .timeout(REMOTE_TIMEOUT)
            .build()
            .expect("reqwest client with static config");
        Embedder {
            config,
            model: DEFAULT_REMOTE_MODEL.to_string(),
            http,
        }
    }

    pub fn local_only() -> Self {
        Self::new(RuntimeConfig {
            embedding_mode: EmbeddingMode::Local,
            ..RuntimeConfig::default()
        })
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    pub fn remote_available(&self) -> bool {
        self.config.provider == Provider::OpenAiCompatible
            && self.config.base_url.is_some()
            && self.config.api_key.is_some()
    }

    pub async fn embed_remote(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        let (Some(base), Some(key)) = (&self.config.base_url, &self.config.api_key) else {
            return Err(EmbeddingError::RemoteNotConfigured);
        };
        let url = format!("{}/embeddings", base.trim_end_matches('/'));
        let unavailable = |msg: String| EmbeddingError::Unavailable(redact(&msg, [key]));

        let resp = self
            .http
            .post(&url)
            .bearer_auth(key.expose())
            .json(&json!({ "model": self.model, "input": text }))
            .send()
            .await
            .map_err(|e| unavailable(e.without_url().to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(unavailable(format!("HTTP {status}")));
        }

        #[derive(Deserialize)]
        struct Datum {
            embedding: Vec<f64>,
        }
        #[derive(Deserialize)]
        struct Body {
            data: Vec<Datum>,
        }
        let body: Body = resp
            .json()
            .await
            .map_err(|e| unavailable(format!("bad embeddings body: {}", e.without_url())))?;
        let first = body
            .data
            .into_iter()
            .next()
            .ok_or_else(|| unavailable("empty embeddings response".into()))?;
        if first.embedding.is_empty() {
            return Err(unavailable("zero-length embedding".into()));
        }
        Ok(Embedding {
            vector: fit_dimension(first.embedding),
            provenance: Provenance::Remote,
        })
    }
}

#[async_trait]
impl TextEmbedder for Embedder {
    async fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        match select_mode(self.config.embedding_mode, self.remote_available())? {
            Provenance::Local => Ok(embed_local(text)),
            Provenance::Remote => match self.embed_remote(text).await {
                Ok(e) => Ok(e),
                Err(err) if self.config.embedding_mode == EmbeddingMode::Auto => {
                    tracing::warn!(error = %err, "remote embedding failed, using local embedder");
                    Ok(embed_local(text))
                }
                Err(err) => Err(err),
            },
        }
    }
}

/// Always fails; stands in for an unreachable embedding backend.
#[derive(Debug, Default, Clone, Copy)]
pub struct FailingEmbedder;

#[async_trait]
impl TextEmbedder for FailingEmbedder {
    async fn embed(&self, _text: &str) -> Result<Embedding, EmbeddingError> {
        Err(EmbeddingError::Unavailable("embedder disabled".into()))
    }
}
