//! Fixed-length text embeddings for behavior descriptions.
//!
//! The local encoder hashes character n-grams into 768 signed buckets and
//! L2-normalizes. The remote encoder calls an embeddings endpoint that must
//! return exactly 768 floats.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use twox_hash::XxHash64;

use crate::cache::{CacheRecord, DiskCache};
use crate::remote::{JsonClient, RemoteError, RetryPolicy};
use crate::semantic::DEFAULT_API_KEY_ENV;

pub const EMBEDDING_DIM: usize = 768;
/// Whitespace tokens kept before a remote request.
pub const MAX_INPUT_TOKENS: usize = 256;
pub const LOCAL_ENCODER_ID: &str = "hash-ngram-3-5-v1";
const LOCAL_SEED: u64 = 0x64_72_69_76_65;
const NGRAM_SIZES: [usize; 3] = [3, 4, 5];

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("text is empty")]
    EmptyText,
    #[error("expected {EMBEDDING_DIM}-d embedding, got {got}")]
    WrongDimension { got: usize },
    #[error(transparent)]
    Remote(#[from] RemoteError),
    #[error("cache i/o: {0}")]
    Cache(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EmbedError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEmbedding {
    pub values: Vec<f64>,
    pub encoder_id: String,
}

impl TextEmbedding {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

pub trait TextEncoder: Send + Sync {
    fn encoder_id(&self) -> &str;
    fn encode(&self, text: &str) -> Result<TextEmbedding>;
}

#[derive(Debug, Clone)]
pub struct HashingEncoder {
    seed: u64,
}

impl Default for HashingEncoder {
    fn default() -> Self {
        Self { seed: LOCAL_SEED }
    }
}

impl HashingEncoder {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed }
    }

    fn accumulate(&self, gram: &str, out: &mut [f64]) {
        let h = XxHash64::oneshot(self.seed, gram.as_bytes());
        let bucket = (h % EMBEDDING_DIM as u64) as usize;
        // Low bits are correlated with the bucket index, so use bit parity.
        let sign = if h.count_ones().is_multiple_of(2) { 1.0 } else { -1.0 };
        out[bucket] += sign;
    }
}

impl TextEncoder for HashingEncoder {
    fn encoder_id(&self) -> &str {
        LOCAL_ENCODER_ID
    }

    fn encode(&self, text: &str) -> Result<TextEmbedding> {
        let normalized: String = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        if normalized.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let chars: Vec<char> = normalized.chars().collect();
        let mut out = vec![0.0; EMBEDDING_DIM];
        let mut buf = String::new();
        let mut any = false;
        for n in NGRAM_SIZES {
            for w in chars.windows(n) {
                buf.clear();
                buf.extend(w);
                self.accumulate(&buf, &mut out);
                any = true;
            }
        }
        if !any {
            self.accumulate(&normalized, &mut out);
        }
        let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.iter_mut().for_each(|x| *x /= norm);
        } else {
            // Every bucket cancelled; fall back to a fixed unit vector.
            out[0] = 1.0;
        }
        Ok(TextEmbedding {
            values: out,
            encoder_id: LOCAL_ENCODER_ID.to_string(),
        })
    }
}

pub fn embed_local(text: &str) -> Result<TextEmbedding> {
    HashingEncoder::default().encode(text)
}

/// Keeps the first `max_tokens` whitespace-separated tokens.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> String {
    text.split_whitespace().take(max_tokens).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    /// Embeddings URL; `None` selects the local hashing encoder.
    pub endpoint: Option<String>,
    pub model_id: String,
    pub api_key_env: String,
    pub max_input_tokens: usize,
    pub retry: RetryPolicy,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            model_id: "roberta-base".to_string(),
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            max_input_tokens: MAX_INPUT_TOKENS,
            retry: RetryPolicy::default(),
        }
    }
}

pub struct RemoteEncoder {
    client: JsonClient,
    model_id: String,
    max_input_tokens: usize,
}

impl RemoteEncoder {
    pub fn new(cfg: &EmbeddingConfig) -> Result<Self> {
        let endpoint = cfg.endpoint.clone().ok_or(RemoteError::NotConfigured)?;
        Ok(Self {
            client: JsonClient::from_env(endpoint, &cfg.api_key_env, cfg.retry.clone()),
            model_id: cfg.model_id.clone(),
            max_input_tokens: cfg.max_input_tokens,
        })
    }

    pub fn request_body(&self, text: &str) -> Value {
        json!({"model": self.model_id, "input": truncate_tokens(text, self.max_input_tokens)})
    }

    pub fn request_count(&self) -> usize {
        self.client.request_count()
    }
}

impl TextEncoder for RemoteEncoder {
    fn encoder_id(&self) -> &str {
        &self.model_id
    }

    fn encode(&self, text: &str) -> Result<TextEmbedding> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let resp = self.client.post(&self.request_body(text))?;
        let arr = resp
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| RemoteError::Malformed("no data[0].embedding".into()))?;
        let values = arr
            .iter()
            .map(|x| x.as_f64().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| RemoteError::Malformed("non-numeric embedding entry".into()))?;
        if values.len() != EMBEDDING_DIM {
            return Err(EmbedError::WrongDimension { got: values.len() });
        }
        Ok(TextEmbedding {
            values,
            encoder_id: self.model_id.clone(),
        })
    }
}

pub fn embed_remote(text: &str, cfg: &EmbeddingConfig) -> Result<TextEmbedding> {
    RemoteEncoder::new(cfg)?.encode(text)
}

/// Builds the configured encoder; `offline` forces the local one.
pub fn encoder_from_config(cfg: &EmbeddingConfig, offline: bool) -> Result<Box<dyn TextEncoder>> {
    match (&cfg.endpoint, offline) {
        (Some(_), false) => Ok(Box::new(RemoteEncoder::new(cfg)?)),
        _ => Ok(Box::new(HashingEncoder::default())),
    }
}

/// Wraps an encoder with a disk cache keyed by text and encoder id.
pub struct CachedEncoder<E> {
    inner: E,
    cache: DiskCache,
}

impl<E: TextEncoder> CachedEncoder<E> {
    pub fn new(inner: E, cache: DiskCache) -> Self {
        Self { inner, cache }
    }

    fn key(&self, text: &str) -> String {
        format!("embed:{}:{}", self.inner.encoder_id(), text)
    }
}

fn parse_floats(body: &str) -> Option<Vec<f64>> {
    body.split_whitespace().map(|t| t.parse().ok()).collect()
}

impl<E: TextEncoder> TextEncoder for CachedEncoder<E> {
    fn encoder_id(&self) -> &str {
        self.inner.encoder_id()
    }

    fn encode(&self, text: &str) -> Result<TextEmbedding> {
        let key = self.key(text);
        if let Some(values) = self.cache.get(&key).and_then(|r| parse_floats(&r.body)) {
            if values.len() == EMBEDDING_DIM {
                return Ok(TextEmbedding {
                    values,
                    encoder_id: self.inner.encoder_id().to_string(),
                });
            }
        }
        let emb = self.inner.encode(text)?;
        let body = emb.values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
        self.cache
            .put(&key, &CacheRecord::new(&emb.encoder_id, "embedding", body))?;
        Ok(emb)
    }
}

impl TextEncoder for Box<dyn TextEncoder> {
    fn encoder_id(&self) -> &str {
        (**self).encoder_id()
    }

    fn encode(&self, text: &str) -> Result<TextEmbedding> {
        (**self).encode(text)
    }
}
