//! Natural-language behavior descriptions of feature vectors.
//!
//! A one-shot prompt listing every normalized feature is sent to a
//! chat-completion service. Results are cached on disk keyed by the feature
//! content hash and model id. Without an endpoint, a rule-based describer
//! bins a few named z-scores into fixed phrases.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cache::{CacheRecord, DiskCache};
use crate::features::{apply_norm, FeatureVector, NormStats};
use crate::remote::{JsonClient, RemoteError, RetryPolicy};

pub const WORD_LIMIT: usize = 100;
/// Hard cap on stored description length, in characters.
pub const MAX_TEXT_CHARS: usize = 4_000;
pub const FALLBACK_MODEL_ID: &str = "rule-describer-v1";
pub const DEFAULT_API_KEY_ENV: &str = "DRIVESTYLE_API_KEY";

const SYSTEM_TEXT: &str = "You are an expert in autonomous vehicle driving behavior analysis.";
const EXAMPLE_TITLE: &str = "Example: 1 Aggressive";
const EXAMPLE_FEATURES: [(&str, f64); 2] = [
    ("acceleration_autocorrelation", 0.498655829),
    ("acceleration_change_rate", -0.540905602),
];
const EXAMPLE_RESPONSE: &str = "The driver exhibits frequent and significant acceleration and \
deceleration, as indicated by high acceleration autocorrelation and acceleration change rate. \
The high jerk values and frequent occurrences of hard accelerations, brakes, and turns suggest \
an aggressive driving style. Additionally, the speed metrics show high and fluctuating speeds, \
reinforcing the characterization of this driver's style as aggressive. Overall, this driver \
demonstrates an aggressive driving behavior.";

#[derive(Debug, Error)]
pub enum SemanticError {
    #[error("dimension mismatch: stats have {expected} features, vector has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Remote(#[from] RemoteError),
    #[error("cache i/o: {0}")]
    Cache(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SemanticError>;

#[derive(Debug, Clone, PartialEq)]
pub struct PromptDocument {
    pub system: String,
    pub example_title: String,
    pub example_features: Vec<(String, f64)>,
    pub example_response: String,
    pub target: Vec<(String, f64)>,
    pub word_limit: usize,
}

fn push_feature_lines(out: &mut String, features: &[(String, f64)]) {
    for (name, value) in features {
        out.push_str(&format!("{name}: {value:.9}\n"));
    }
}

impl PromptDocument {
    pub fn instruction(&self) -> String {
        format!(
            "Please analyze the driving style based on the following feature values and \
             describe it in natural language within {} words.",
            self.word_limit
        )
    }

    /// The single user message sent to the chat service.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.system);
        out.push_str("\n\n");
        out.push_str(&self.example_title);
        out.push_str("\nFeature Values:\n");
        push_feature_lines(&mut out, &self.example_features);
        out.push_str("\nUser Instruction:\n");
        out.push_str(&self.instruction());
        out.push_str("\n\nLLM Response:\n");
        out.push_str(&self.example_response);
        out.push_str("\n\nTarget:\nFeature Values:\n");
        push_feature_lines(&mut out, &self.target);
        out.push_str("\nUser Instruction:\n");
        out.push_str(&self.instruction());
        out.push('\n');
        out
    }

    /// Lines of the target feature block only.
    pub fn target_lines(&self) -> Vec<String> {
        self.target.iter().map(|(n, v)| format!("{n}: {v:.9}")).collect()
    }
}

/// Builds the one-shot prompt for an already-normalized vector.
pub fn build_prompt(fv: &FeatureVector) -> PromptDocument {
    PromptDocument {
        system: SYSTEM_TEXT.to_string(),
        example_title: EXAMPLE_TITLE.to_string(),
        example_features: EXAMPLE_FEATURES.iter().map(|(n, v)| (n.to_string(), *v)).collect(),
        example_response: EXAMPLE_RESPONSE.to_string(),
        target: fv.iter().map(|(n, v)| (n.to_string(), v)).collect(),
        word_limit: WORD_LIMIT,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptionSource {
    Remote,
    Fallback,
    Cache,
}

impl fmt::Display for DescriptionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DescriptionSource::Remote => "remote",
            DescriptionSource::Fallback => "fallback",
            DescriptionSource::Cache => "cache",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticDescription {
    pub text: String,
    pub source: DescriptionSource,
    pub feature_hash: String,
    pub model_id: String,
}

/// SHA-256 over feature names and the little-endian bytes of each value.
pub fn feature_hash(fv: &FeatureVector) -> String {
    let mut h = Sha256::new();
    for (name, value) in fv.iter() {
        h.update(name.as_bytes());
        h.update([0u8]);
        h.update(value.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn cap_text(text: &str) -> String {
    let trimmed = text.trim();
    match trimmed.char_indices().nth(MAX_TEXT_CHARS) {
        Some((idx, _)) => trimmed[..idx].to_string(),
        None => trimmed.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmConfig {
    /// Chat-completions URL; `None` routes everything to the rule-based describer.
    pub endpoint: Option<String>,
    pub model_id: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            model_id: "gpt-4o".to_string(),
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            temperature: 0.5,
            max_tokens: 500,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
        }
    }
}

/// Chat-completion client.
pub struct ChatService {
    client: JsonClient,
    model_id: String,
    temperature: f64,
    max_tokens: u32,
}

impl ChatService {
    pub fn new(cfg: &LlmConfig) -> Result<Self> {
        let endpoint = cfg.endpoint.clone().ok_or(RemoteError::NotConfigured)?;
        Ok(Self {
            client: JsonClient::from_env(endpoint, &cfg.api_key_env, cfg.retry.clone()),
            model_id: cfg.model_id.clone(),
            temperature: cfg.temperature,
            max_tokens: cfg.max_tokens,
        })
    }

    pub fn request_body(&self, prompt: &PromptDocument) -> Value {
        json!({
            "model": self.model_id,
            "messages": [{"role": "user", "content": prompt.render()}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }

    pub fn request_count(&self) -> usize {
        self.client.request_count()
    }

    /// Returns the trimmed content of the first choice.
    pub fn complete(&self, prompt: &PromptDocument) -> Result<String> {
        let resp = self.client.post(&self.request_body(prompt))?;
        let content = resp
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| RemoteError::Malformed("no choices[0].message.content".into()))?;
        let text = cap_text(content);
        if text.is_empty() {
            return Err(RemoteError::Malformed("empty completion".into()).into());
        }
        Ok(text)
    }
}

/// One-off remote description; `feature_hash` is left empty because the
/// prompt alone does not carry the originating vector.
pub fn describe_remote(prompt: &PromptDocument, cfg: &LlmConfig) -> Result<SemanticDescription> {
    let service = ChatService::new(cfg)?;
    Ok(SemanticDescription {
        text: service.complete(prompt)?,
        source: DescriptionSource::Remote,
        feature_hash: String::new(),
        model_id: cfg.model_id.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Level {
    Low,
    Medium,
    High,
}

impl Level {
    fn of(z: f64) -> Self {
        if z > 0.5 {
            Level::High
        } else if z < -0.5 {
            Level::Low
        } else {
            Level::Medium
        }
    }

    fn score(self) -> i32 {
        match self {
            Level::Low => -1,
            Level::Medium => 0,
            Level::High => 1,
        }
    }
}

fn named_z(fv: &FeatureVector, stats: &NormStats, name: &str) -> f64 {
    fv.names
        .iter()
        .position(|n| n == name)
        .map(|i| stats.z(i, fv.values[i]))
        .unwrap_or(0.0)
}

/// Rule-based description from the z-scores of a handful of named features.
pub fn describe_fallback(fv: &FeatureVector, stats: &NormStats) -> Result<SemanticDescription> {
    if fv.dim() != stats.dim() {
        return Err(SemanticError::DimensionMismatch {
            expected: stats.dim(),
            got: fv.dim(),
        });
    }
    let z = |name: &str| named_z(fv, stats, name);
    let speed = Level::of(z("speed_mean"));
    let volatility = Level::of(z("acceleration_change_rate"));
    let events = [
        ("hard accelerations", z("num_hard_accelerations")),
        ("hard braking", z("num_hard_brakes")),
        ("hard turns", z("num_hard_turns")),
    ];
    let hard = Level::of(events.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max));
    let roughness = Level::of(z("jerk_std"));

    let speed_phrase = match speed {
        Level::Low => "keeps speeds low",
        Level::Medium => "drives at moderate speeds",
        Level::High => "travels at high speeds",
    };
    let volatility_phrase = match volatility {
        Level::Low => "changes acceleration gently",
        Level::Medium => "shows ordinary acceleration changes",
        Level::High => "shows large and frequent acceleration changes",
    };
    let hard_phrase = match hard {
        Level::Low => "rarely performs hard maneuvers".to_string(),
        Level::Medium => "performs occasional hard maneuvers".to_string(),
        Level::High => {
            let frequent: Vec<&str> = events
                .iter()
                .filter(|e| Level::of(e.1) == Level::High)
                .map(|e| e.0)
                .collect();
            format!("exhibits frequent {}", frequent.join(" and "))
        }
    };
    let smooth_phrase = match roughness {
        Level::Low => "smooth, with little jerk",
        Level::Medium => "reasonably smooth",
        Level::High => "jerky, with abrupt changes",
    };
    let score = speed.score() + volatility.score() + 2 * hard.score() + roughness.score();
    let tendency = match score {
        s if s >= 2 => "an aggressive",
        1 => "an assertive",
        0 => "a moderate",
        _ => "a conservative",
    };
    let text = format!(
        "The driver {speed_phrase}, {volatility_phrase}, and {hard_phrase}. \
         Control is {smooth_phrase}. Overall this indicates {tendency} tendency."
    );
    let normalized = apply_norm(fv, stats).map_err(|_| SemanticError::DimensionMismatch {
        expected: stats.dim(),
        got: fv.dim(),
    })?;
    Ok(SemanticDescription {
        text,
        source: DescriptionSource::Fallback,
        feature_hash: feature_hash(&normalized),
        model_id: FALLBACK_MODEL_ID.to_string(),
    })
}

/// Cached description service: cache first, then remote if configured,
/// otherwise the rule-based describer.
pub struct Describer {
    chat: Option<ChatService>,
    model_id: String,
    cache: Option<DiskCache>,
    max_in_flight: usize,
    cache_hits: AtomicUsize,
}

impl Describer {
    /// `offline` forces the rule-based path even when an endpoint is set.
    pub fn new(cfg: &LlmConfig, cache: Option<DiskCache>, offline: bool) -> Result<Self> {
        let chat = match (&cfg.endpoint, offline) {
            (Some(_), false) => Some(ChatService::new(cfg)?),
            _ => None,
        };
        let model_id = if chat.is_some() {
            cfg.model_id.clone()
        } else {
            FALLBACK_MODEL_ID.to_string()
        };
        Ok(Self {
            chat,
            model_id,
            cache,
            max_in_flight: cfg.max_in_flight.max(1),
            cache_hits: AtomicUsize::new(0),
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn is_remote(&self) -> bool {
        self.chat.is_some()
    }

    /// HTTP requests issued so far, retries included.
    pub fn remote_requests(&self) -> usize {
        self.chat.as_ref().map_or(0, ChatService::request_count)
    }

    pub fn cache_hits(&self) -> usize {
        self.cache_hits.load(Ordering::SeqCst)
    }

    fn cache_key(&self, hash: &str) -> String {
        format!("{hash}:{}", self.model_id)
    }

    /// Describes a raw feature vector; `stats` supplies the normalization.
    pub fn describe(&self, fv: &FeatureVector, stats: &NormStats) -> Result<SemanticDescription> {
        let normalized = apply_norm(fv, stats).map_err(|_| SemanticError::DimensionMismatch {
            expected: stats.dim(),
            got: fv.dim(),
        })?;
        let hash = feature_hash(&normalized);
        let key = self.cache_key(&hash);
        if let Some(rec) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            if !rec.body.trim().is_empty() {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok(SemanticDescription {
                    text: rec.body,
                    source: DescriptionSource::Cache,
                    feature_hash: hash,
                    model_id: self.model_id.clone(),
                });
            }
        }
        let desc = match &self.chat {
            Some(chat) => SemanticDescription {
                text: chat.complete(&build_prompt(&normalized))?,
                source: DescriptionSource::Remote,
                feature_hash: hash,
                model_id: self.model_id.clone(),
            },
            None => describe_fallback(fv, stats)?,
        };
        if let Some(cache) = &self.cache {
            let mut rec = CacheRecord::new(&desc.model_id, &desc.source.to_string(), desc.text.clone());
            rec.header.insert("feature_hash".into(), desc.feature_hash.clone());
            cache.put(&key, &rec)?;
        }
        Ok(desc)
    }

    /// Describes many vectors with at most `max_in_flight` concurrent requests.
    /// Output order matches input order.
    pub fn describe_all(&self, fvs: &[FeatureVector], stats: &NormStats) -> Result<Vec<SemanticDescription>> {
        let workers = if self.chat.is_some() { self.max_in_flight } else { 1 };
        let next = AtomicUsize::new(0);
        let mut slots: Vec<Option<Result<SemanticDescription>>> = (0..fvs.len()).map(|_| None).collect();
        let results = std::sync::Mutex::new(&mut slots);
        std::thread::scope(|s| {
            for _ in 0..workers.min(fvs.len().max(1)) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= fvs.len() {
                        break;
                    }
                    let r = self.describe(&fvs[i], stats);
                    results.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
                });
            }
        });
        slots.into_iter().map(|r| r.expect("every index is visited")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn names() -> Arc<[String]> {
        crate::features::SignalRegistry::default().feature_names().into()
    }

    fn stats_unit() -> NormStats {
        let n = names();
        NormStats {
            names: n.to_vec(),
            mean: vec![0.0; n.len()],
            std: vec![1.0; n.len()],
        }
    }

    fn fv(values: Vec<f64>) -> FeatureVector {
        FeatureVector {
            values,
            names: names(),
            n_signals: 3,
        }
    }

    #[test]
    fn prompt_lists_every_feature_once() {
        let v = fv((0..36).map(|i| i as f64 * 0.1 - 1.0).collect());
        let p = build_prompt(&v);
        let text = p.render();
        assert_eq!(p.target_lines().len(), 36);
        assert!(text.contains(&format!("acceleration_autocorrelation: {:.9}\n", 2.5)));
        for line in p.target_lines() {
            assert_eq!(text.matches(&format!("{line}\n")).count(), 1, "{line}");
        }
        assert!(text.contains("within 100 words"));
        assert!(text.contains("acceleration_autocorrelation: 0.498655829"));
        assert_eq!(text, build_prompt(&v).render());
    }

    #[test]
    fn fallback_mean_vector_is_moderate() {
        let d = describe_fallback(&fv(vec![0.0; 36]), &stats_unit()).unwrap();
        assert!(d.text.contains("moderate speeds"));
        assert!(d.text.contains("ordinary acceleration changes"));
        assert!(d.text.contains("occasional hard maneuvers"));
        assert!(d.text.contains("reasonably smooth"));
        assert!(d.text.ends_with("a moderate tendency."));
        assert_eq!(d.source, DescriptionSource::Fallback);
    }

    #[test]
    fn fallback_hard_braking_is_aggressive() {
        let mut values = vec![0.0; 36];
        let idx = names().iter().position(|n| n == "num_hard_brakes").unwrap();
        values[idx] = 2.0;
        let d = describe_fallback(&fv(values.clone()), &stats_unit()).unwrap();
        assert!(d.text.contains("frequent hard braking"), "{}", d.text);
        assert!(d.text.contains("aggressive"));
        assert_eq!(d, describe_fallback(&fv(values), &stats_unit()).unwrap());
    }

    #[test]
    fn fallback_low_everything_is_conservative() {
        let mut values = vec![0.0; 36];
        for name in ["speed_mean", "acceleration_change_rate", "num_hard_brakes", "jerk_std"] {
            let idx = names().iter().position(|n| n == name).unwrap();
            values[idx] = -1.0;
        }
        let d = describe_fallback(&fv(values), &stats_unit()).unwrap();
        assert!(d.text.contains("conservative tendency"), "{}", d.text);
    }

    #[test]
    fn fallback_dimension_mismatch() {
        let short = FeatureVector {
            values: vec![0.0; 3],
            names: vec!["a".into(), "b".into(), "c".into()].into(),
            n_signals: 0,
        };
        assert!(matches!(
            describe_fallback(&short, &stats_unit()),
            Err(SemanticError::DimensionMismatch { expected: 36, got: 3 })
        ));
    }

    #[test]
    fn text_is_capped() {
        let long = "x".repeat(5_000);
        assert_eq!(cap_text(&long).chars().count(), MAX_TEXT_CHARS);
        assert_eq!(cap_text("  hi \n"), "hi");
    }
}
