//! Client for an external text-embedding server.
//!
//! Wire contract: `POST {endpoint}` with `{"texts": [...]}`, answered by
//! `{"embeddings": [[...], ...]}` with one row per text in request order.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{EmbeddingMatrix, VecError};

pub const TEXT_PLACEHOLDER: &str = "[TEXT]";

const MAX_RETRIES: u32 = 3;
const BACKOFF_BASE: Duration = Duration::from_millis(100);

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("embedding provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("embedding provider returned a bad response: {0}")]
    ProviderBadResponse(String),
    #[error("embedding provider timed out")]
    Timeout,
    #[error("no texts to embed")]
    EmptyInput,
    #[error("invalid provider configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub batch_size: usize,
    pub timeout_secs: f64,
    pub prompt_template: String,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/embed".to_string(),
            batch_size: 256,
            timeout_secs: 30.0,
            prompt_template: TEXT_PLACEHOLDER.to_string(),
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.batch_size == 0 {
            return Err(ProviderError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.prompt_template.matches(TEXT_PLACEHOLDER).count() != 1 {
            return Err(ProviderError::InvalidConfig(format!(
                "prompt template must contain {TEXT_PLACEHOLDER} exactly once"
            )));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(ProviderError::InvalidConfig("timeout must be positive".into()));
        }
        Ok(())
    }

    pub fn apply_template(&self, text: &str) -> String {
        self.prompt_template.replacen(TEXT_PLACEHOLDER, text, 1)
    }
}

/// Anything that turns texts into normalized embedding rows, in input order.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<EmbeddingMatrix, ProviderError>;
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f32>>,
}

enum Attempt {
    Transient(ProviderError),
    Fatal(ProviderError),
}

pub struct HttpProvider {
    cfg: ProviderConfig,
    client: reqwest::blocking::Client,
    expected_dim: Option<usize>,
}

impl HttpProvider {
    pub fn new(cfg: ProviderConfig) -> Result<Self, ProviderError> {
        cfg.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| ProviderError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            cfg,
            client,
            expected_dim: None,
        })
    }

    /// Rejects responses whose rows are not of dimension `dim`.
    pub fn with_expected_dim(mut self, dim: usize) -> Self {
        self.expected_dim = Some(dim);
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    fn request_once(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, Attempt> {
        let resp = self
            .client
            .post(&self.cfg.endpoint)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    Attempt::Transient(ProviderError::Timeout)
                } else {
                    Attempt::Transient(ProviderError::ProviderUnreachable(e.to_string()))
                }
            })?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Transient(ProviderError::ProviderBadResponse(format!(
                "status {status}"
            ))));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(ProviderError::ProviderBadResponse(format!(
                "status {status}"
            ))));
        }
        let body: EmbedResponse = resp.json().map_err(|e| {
            if e.is_timeout() {
                Attempt::Transient(ProviderError::Timeout)
            } else {
                Attempt::Fatal(ProviderError::ProviderBadResponse(e.to_string()))
            }
        })?;
        Ok(body.embeddings)
    }

    fn request_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        let mut attempt = 0;
        loop {
            match self.request_once(texts) {
                Ok(rows) => return Ok(rows),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Transient(e)) => {
                    if attempt >= MAX_RETRIES {
                        return Err(e);
                    }
                    let delay = BACKOFF_BASE * 2u32.pow(attempt);
                    log::warn!("embedding request failed ({e}); retrying in {delay:?}");
                    thread::sleep(delay);
                    attempt += 1;
                }
            }
        }
    }
}

impl Embedder for HttpProvider {
    fn embed(&self, texts: &[String]) -> Result<EmbeddingMatrix, ProviderError> {
        fetch_with(self, texts)
    }
}

/// One-shot convenience wrapper around [`HttpProvider`].
pub fn fetch_embeddings(cfg: &ProviderConfig, texts: &[String]) -> Result<EmbeddingMatrix, ProviderError> {
    HttpProvider::new(cfg.clone())?.embed(texts)
}

fn fetch_with(p: &HttpProvider, texts: &[String]) -> Result<EmbeddingMatrix, ProviderError> {
    if texts.is_empty() {
        return Err(ProviderError::EmptyInput);
    }
    let mut dim = p.expected_dim;
    let mut data: Vec<f32> = Vec::new();
    for batch in texts.chunks(p.cfg.batch_size) {
        let prompts: Vec<String> = batch.iter().map(|t| p.cfg.apply_template(t)).collect();
        let rows = p.request_batch(&prompts)?;
        if rows.len() != batch.len() {
            return Err(ProviderError::ProviderBadResponse(format!(
                "expected {} embeddings, got {}",
                batch.len(),
                rows.len()
            )));
        }
        for row in rows {
            let d = *dim.get_or_insert(row.len());
            if row.len() != d || d == 0 {
                return Err(ProviderError::ProviderBadResponse(format!(
                    "embedding of dimension {} where {d} was expected",
                    row.len()
                )));
            }
            let v = super::normalize(&row).map_err(|e: VecError| {
                ProviderError::ProviderBadResponse(format!("unusable embedding: {e}"))
            })?;
            data.extend_from_slice(v.values());
        }
    }
    let dim = dim.unwrap_or(1);
    EmbeddingMatrix::new(dim, data, true).map_err(|e| ProviderError::ProviderBadResponse(e.to_string()))
}
