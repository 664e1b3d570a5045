//! Chat-completion transport plus a deterministic offline mock.
//!
//! The mock backend answers in two tiers: fixture replay keyed by a digest of
//! the prompt, then a rule heuristic that classifies differing tokens the way
//! the prompt instructs a real model to. Identical prompts always produce
//! identical replies, which keeps the whole pipeline reproducible offline.

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::WILDCARD;

/// Default name of the environment variable holding the API key.
pub const DEFAULT_API_KEY_ENV: &str = "SCOPE_LLM_API_KEY";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    /// Fixed at 0 for reproducibility.
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub api_key_env: String,
}

impl Default for LlmConfig {
    fn default() -> LlmConfig {
        LlmConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".to_string(),
            model: "gpt-4o".to_string(),
            temperature: 0.0,
            timeout_secs: 30,
            max_retries: 3,
            retry_backoff_ms: 250,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
        }
    }
}

/// Monotonic usage totals. `invocations` counts every `complete` call
/// regardless of outcome.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct UsageCounters {
    pub invocations: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication failed (HTTP {0})")]
    AuthFailure(u16),
    #[error("rate limited")]
    RateLimited,
    #[error("retries exhausted after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("API key environment variable {0} is not set")]
    MissingApiKey(String),
    #[error("malformed completion response: {0}")]
    BadResponse(String),
}

/// A completion backend. Implementations keep their own usage counters.
pub trait LlmBackend {
    fn complete(&mut self, prompt: &str) -> Result<String, LlmError>;
    fn usage(&self) -> UsageCounters;
}

/// Digest used to key fixture files: hex SHA-256 of the prompt text.
pub fn fixture_key(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

fn estimate_tokens(text: &str) -> u64 {
    // Rough word-based estimate; good enough for relative accounting.
    text.split_whitespace().count() as u64
}

// ---------------------------------------------------------------------------
// Mock backend
// ---------------------------------------------------------------------------

/// Offline deterministic backend: fixture replay, then rule heuristic.
#[derive(Debug, Default)]
pub struct MockBackend {
    fixtures_dir: Option<PathBuf>,
    usage: UsageCounters,
}

impl MockBackend {
    pub fn new(fixtures_dir: Option<PathBuf>) -> MockBackend {
        MockBackend {
            fixtures_dir,
            usage: UsageCounters::default(),
        }
    }

    fn fixture_reply(&self, prompt: &str) -> Option<String> {
        let dir = self.fixtures_dir.as_ref()?;
        let path = dir.join(format!("{}.txt", fixture_key(prompt)));
        std::fs::read_to_string(path).ok()
    }
}

impl LlmBackend for MockBackend {
    fn complete(&mut self, prompt: &str) -> Result<String, LlmError> {
        self.usage.invocations += 1;
        self.usage.prompt_tokens += estimate_tokens(prompt);
        let reply = match self.fixture_reply(prompt) {
            Some(reply) => reply,
            None => heuristic_reply(prompt),
        };
        self.usage.completion_tokens += estimate_tokens(&reply);
        Ok(reply)
    }

    fn usage(&self) -> UsageCounters {
        self.usage
    }
}

/// Markers the prompt asset uses to introduce the two compared strings. The
/// heuristic reads the line that follows each marker.
pub(crate) const LOG_MARKER: &str = "New log message:";
pub(crate) const TEMPLATE_MARKER: &str = "Candidate template:";

fn line_after_marker<'a>(prompt: &'a str, marker: &str) -> Option<&'a str> {
    let mut lines = prompt.lines();
    while let Some(line) = lines.next() {
        if line.trim() == marker {
            for candidate in lines.by_ref() {
                let candidate = candidate.trim();
                if !candidate.is_empty() {
                    return Some(candidate);
                }
            }
        }
    }
    None
}

/// Word pairs carrying opposing or discrete semantics; a difference on such a
/// pair means the tokens are constants of two distinct templates.
fn antonyms() -> &'static HashSet<(&'static str, &'static str)> {
    static SET: OnceLock<HashSet<(&'static str, &'static str)>> = OnceLock::new();
    SET.get_or_init(|| {
        let pairs = [
            ("boot", "shutdown"),
            ("start", "stop"),
            ("started", "stopped"),
            ("starting", "stopping"),
            ("up", "down"),
            ("open", "close"),
            ("opened", "closed"),
            ("on", "off"),
            ("enable", "disable"),
            ("enabled", "disabled"),
            ("active", "inactive"),
            ("online", "offline"),
            ("connect", "disconnect"),
            ("connected", "disconnected"),
            ("success", "failure"),
            ("succeeded", "failed"),
            ("accept", "reject"),
            ("accepted", "rejected"),
            ("add", "remove"),
            ("added", "removed"),
            ("true", "false"),
            ("yes", "no"),
            ("input", "output"),
            ("read", "write"),
            ("lock", "unlock"),
            ("locked", "unlocked"),
            ("valid", "invalid"),
            ("allow", "deny"),
            ("allowed", "denied"),
            ("grant", "revoke"),
            ("granted", "revoked"),
            ("begin", "end"),
            ("push", "pull"),
            ("high", "low"),
            ("mount", "unmount"),
            ("mounted", "unmounted"),
            ("attach", "detach"),
            ("attached", "detached"),
        ];
        let mut set = HashSet::new();
        for (a, b) in pairs {
            set.insert((a, b));
            set.insert((b, a));
        }
        set
    })
}

/// Nouns that commonly introduce a value in `key value` phrasing.
fn key_words() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        [
            "user", "users", "host", "hosts", "node", "nodes", "port", "pid", "uid", "gid",
            "id", "session", "device", "interface", "file", "path", "dir", "directory",
            "process", "service", "job", "task", "client", "server", "address", "addr",
            "name", "group", "account", "domain", "instance", "container", "pod", "thread",
            "worker", "queue", "topic", "channel", "key", "token", "request", "transaction",
            "volume", "disk", "partition", "database", "table", "index", "bucket", "region",
            "zone", "cluster", "from", "to", "for", "by", "on", "at",
        ]
        .into_iter()
        .collect()
    })
}

fn is_data_like(token: &str) -> bool {
    token == WILDCARD
        || token.chars().any(|c| c.is_ascii_digit())
        || token.contains('/')
        || token.contains('@')
}

fn is_plural_pair(a: &str, b: &str) -> bool {
    let (short, long) = if a.len() < b.len() { (a, b) } else { (b, a) };
    long.strip_suffix('s') == Some(short) || long.strip_suffix("es") == Some(short)
}

/// healthy/unhealthy, safe/unsafe and friends carry opposing semantics.
fn is_negation_pair(a: &str, b: &str) -> bool {
    a.strip_prefix("un") == Some(b) || b.strip_prefix("un") == Some(a)
}

fn is_capitalized(token: &str) -> bool {
    token.chars().next().is_some_and(|c| c.is_uppercase())
}

#[derive(Debug, PartialEq, Eq)]
enum TokenClass {
    Constant,
    Variable,
}

fn classify_difference(log_tok: &str, tpl_tok: &str, idx: usize, log: &[&str]) -> TokenClass {
    if is_data_like(log_tok) || is_data_like(tpl_tok) {
        return TokenClass::Variable;
    }
    let (a, b) = (log_tok.to_lowercase(), tpl_tok.to_lowercase());
    if is_plural_pair(&a, &b) {
        return TokenClass::Constant;
    }
    if is_negation_pair(&a, &b) || antonyms().contains(&(a.as_str(), b.as_str())) {
        return TokenClass::Constant;
    }
    if idx > 0 {
        let prev = log[idx - 1];
        if prev == "=" || prev == ":" || key_words().contains(prev.to_lowercase().as_str()) {
            return TokenClass::Variable;
        }
    }
    if is_capitalized(log_tok) || is_capitalized(tpl_tok) {
        // Leading fixed labels and other capitalized modifiers stay constant.
        return TokenClass::Constant;
    }
    TokenClass::Variable
}

fn side_template(tokens: &[&str]) -> String {
    tokens
        .iter()
        .map(|t| if is_data_like(t) { WILDCARD } else { *t })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Deterministic rule-based reply following the prompt's output contract.
fn heuristic_reply(prompt: &str) -> String {
    let (Some(log_line), Some(tpl_line)) = (
        line_after_marker(prompt, LOG_MARKER),
        line_after_marker(prompt, TEMPLATE_MARKER),
    ) else {
        return "NO_MATCH".to_string();
    };
    let log: Vec<&str> = log_line.split_whitespace().collect();
    let tpl: Vec<&str> = tpl_line.split_whitespace().collect();
    if log.len() != tpl.len() || log.is_empty() {
        return "NO_MATCH".to_string();
    }

    let mut reasoning = format!(
        "Step 1: template of the log message: {}\nStep 2: template of the candidate: {}\n",
        side_template(&log),
        side_template(&tpl)
    );

    let mut merged: Vec<String> = Vec::with_capacity(log.len());
    let mut matches = true;
    for (idx, (l, t)) in log.iter().zip(&tpl).enumerate() {
        if l == t && *l != WILDCARD {
            merged.push((*l).to_string());
            continue;
        }
        if *l == WILDCARD || *t == WILDCARD {
            merged.push(WILDCARD.to_string());
            continue;
        }
        match classify_difference(l, t, idx, &log) {
            TokenClass::Variable => {
                reasoning.push_str(&format!(
                    "Step 3: position {idx}: {l} vs {t} is a variable value.\n"
                ));
                merged.push(WILDCARD.to_string());
            }
            TokenClass::Constant => {
                reasoning.push_str(&format!(
                    "Step 3: position {idx}: {l} vs {t} are distinct constants.\n"
                ));
                matches = false;
            }
        }
    }

    if matches {
        format!("{reasoning}MATCH: {}", merged.join(" "))
    } else {
        format!("{reasoning}NO_MATCH")
    }
}

// ---------------------------------------------------------------------------
// Live backend
// ---------------------------------------------------------------------------

/// Blocking chat-completion client with retry and exponential backoff.
pub struct HttpBackend {
    cfg: LlmConfig,
    api_key: String,
    agent: ureq::Agent,
    usage: UsageCounters,
}

impl HttpBackend {
    /// Resolves the API key eagerly so a missing key fails at startup.
    pub fn new(cfg: LlmConfig) -> Result<HttpBackend, LlmError> {
        let api_key = std::env::var(&cfg.api_key_env)
            .map_err(|_| LlmError::MissingApiKey(cfg.api_key_env.clone()))?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .tls_config(
                ureq::tls::TlsConfig::builder()
                    .provider(ureq::tls::TlsProvider::NativeTls)
                    .build(),
            )
            .build()
            .into();
        Ok(HttpBackend {
            cfg,
            api_key,
            agent,
            usage: UsageCounters::default(),
        })
    }

    fn attempt(&self, prompt: &str) -> Result<(String, u64, u64), LlmError> {
        let body = json!({
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let response = self
            .agent
            .post(&self.cfg.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(map_ureq_error)?;
        let value: serde_json::Value = response
            .into_body()
            .read_json()
            .map_err(|e| LlmError::BadResponse(e.to_string()))?;
        let content = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| LlmError::BadResponse("missing choices[0].message.content".into()))?
            .to_string();
        let prompt_tokens = value["usage"]["prompt_tokens"]
            .as_u64()
            .unwrap_or_else(|| estimate_tokens(prompt));
        let completion_tokens = value["usage"]["completion_tokens"]
            .as_u64()
            .unwrap_or_else(|| estimate_tokens(&content));
        Ok((content, prompt_tokens, completion_tokens))
    }
}

fn map_ureq_error(err: ureq::Error) -> LlmError {
    match err {
        ureq::Error::StatusCode(code) if code == 401 || code == 403 => LlmError::AuthFailure(code),
        ureq::Error::StatusCode(429) => LlmError::RateLimited,
        ureq::Error::StatusCode(408) => LlmError::Timeout,
        ureq::Error::StatusCode(code) => LlmError::Transport(format!("HTTP {code}")),
        ureq::Error::Timeout(_) => LlmError::Timeout,
        other => LlmError::Transport(other.to_string()),
    }
}

fn retryable(err: &LlmError) -> bool {
    match err {
        LlmError::Timeout | LlmError::RateLimited => true,
        // 5xx and connection-level failures retry; other HTTP statuses do not.
        LlmError::Transport(msg) => !msg.starts_with("HTTP 4"),
        _ => false,
    }
}

impl LlmBackend for HttpBackend {
    fn complete(&mut self, prompt: &str) -> Result<String, LlmError> {
        self.usage.invocations += 1;
        let mut last: Option<LlmError> = None;
        let attempts = self.cfg.max_retries + 1;
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = self.cfg.retry_backoff_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(backoff));
            }
            match self.attempt(prompt) {
                Ok((content, prompt_tokens, completion_tokens)) => {
                    self.usage.prompt_tokens += prompt_tokens;
                    self.usage.completion_tokens += completion_tokens;
                    return Ok(content);
                }
                Err(err) if retryable(&err) => last = Some(err),
                Err(err) => return Err(err),
            }
        }
        Err(LlmError::Exhausted {
            attempts,
            last: last.map(|e| e.to_string()).unwrap_or_default(),
        })
    }

    fn usage(&self) -> UsageCounters {
        self.usage
    }
}
