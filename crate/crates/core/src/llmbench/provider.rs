use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Chat-completion wire format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApiFormat {
    OpenAi,
    Anthropic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model: String,
    pub format: ApiFormat,
    /// Name of the environment variable holding the credential.
    pub credential_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub requests_per_minute: u32,
    pub max_tokens: u32,
    pub cache_dir: Option<PathBuf>,
    /// Serve from cache only; a miss is a per-example failure.
    pub offline: bool,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            format: ApiFormat::OpenAi,
            credential_env: "LLM_API_KEY".into(),
            timeout_secs: 60,
            max_retries: 4,
            backoff_base_ms: 1000,
            requests_per_minute: 60,
            max_tokens: 16,
            cache_dir: None,
            offline: false,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model.trim().is_empty() {
            return Err(Error::config("provider.model", "must not be empty"));
        }
        if !self.offline && self.endpoint.trim().is_empty() {
            return Err(Error::config("provider.endpoint", "must not be empty"));
        }
        if self.requests_per_minute == 0 {
            return Err(Error::config("provider.requests_per_minute", "must be positive"));
        }
        Ok(())
    }
}

/// Credential wrapper that never prints its value.
#[derive(Clone)]
pub struct Secret(String);

impl Secret {
    pub fn new(value: impl Into<String>) -> Self {
        Self(value.into())
    }

    pub fn from_env(var: &str) -> Option<Self> {
        std::env::var(var).ok().filter(|v| !v.trim().is_empty()).map(Self)
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(***)")
    }
}

pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// One HTTP POST. Implemented over ureq; tests substitute scripted transports.
pub trait Transport: Send + Sync {
    fn post(&self, url: &str, headers: &[(&str, &str)], body: &str, timeout: Duration) -> std::result::Result<HttpResponse, String>;
}

pub struct UreqTransport;

impl Transport for UreqTransport {
    fn post(&self, url: &str, headers: &[(&str, &str)], body: &str, timeout: Duration) -> std::result::Result<HttpResponse, String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(url).content_type("application/json");
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        let mut resp = req.send(body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

/// A completed query.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub cached: bool,
    pub retries: u32,
    pub latency_ms: f64,
}

/// Anything that answers prompts: a remote provider or a local mock.
pub trait ChatModel: Sync {
    fn model_name(&self) -> &str;
    fn query(&self, prompt: &str) -> Result<ChatResponse>;
    fn network_calls(&self) -> usize {
        0
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    model: String,
    prompt_sha256: String,
    response: String,
    latency_ms: f64,
}

/// Content-addressed response store keyed by sha256(model, prompt).
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn key(model: &str, prompt: &str) -> String {
        let mut h = Sha256::new();
        h.update(model.as_bytes());
        h.update([0u8]);
        h.update(prompt.as_bytes());
        hex::encode(h.finalize())
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, model: &str, prompt: &str) -> Result<Option<(String, f64)>> {
        let path = self.path(&Self::key(model, prompt));
        match fs::read_to_string(&path) {
            Ok(raw) => {
                let e: CacheEntry = serde_json::from_str(&raw)?;
                Ok((e.model == model).then_some((e.response, e.latency_ms)))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Writes through a temporary file and rename.
    pub fn put(&self, model: &str, prompt: &str, response: &str, latency_ms: f64) -> Result<()> {
        let key = Self::key(model, prompt);
        let entry = CacheEntry {
            model: model.into(),
            prompt_sha256: hex::encode(Sha256::digest(prompt.as_bytes())),
            response: response.into(),
            latency_ms,
        };
        let path = self.path(&key);
        let tmp = self.dir.join(format!(".{key}.{}.tmp", std::process::id()));
        fs::write(&tmp, serde_json::to_vec(&entry)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

/// Spaces request starts at least `60 / rpm` seconds apart.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(requests_per_minute: u32) -> Self {
        Self {
            interval: Duration::from_secs_f64(60.0 / requests_per_minute.max(1) as f64),
            next: Mutex::new(None),
        }
    }

    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

/// Remote chat-completion endpoint with caching, retries and rate limiting.
pub struct Provider {
    config: ProviderConfig,
    secret: Option<Secret>,
    transport: Box<dyn Transport>,
    cache: Option<ResponseCache>,
    limiter: RateLimiter,
    calls: AtomicUsize,
}

impl fmt::Debug for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Provider")
            .field("config", &self.config)
            .field("secret", &self.secret)
            .finish_non_exhaustive()
    }
}

impl Provider {
    /// Reads the credential from `config.credential_env`.
    pub fn new(config: ProviderConfig) -> Result<Self> {
        let secret = Secret::from_env(&config.credential_env);
        Self::with_transport(config, secret, Box::new(UreqTransport))
    }

    pub fn with_transport(config: ProviderConfig, secret: Option<Secret>, transport: Box<dyn Transport>) -> Result<Self> {
        config.validate()?;
        let cache = config.cache_dir.as_ref().map(ResponseCache::new).transpose()?;
        Ok(Self {
            limiter: RateLimiter::new(config.requests_per_minute),
            config,
            secret,
            transport,
            cache,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    fn request(&self, prompt: &str, secret: &Secret) -> (Vec<(&'static str, String)>, Value) {
        let c = &self.config;
        let messages = json!([{ "role": "user", "content": prompt }]);
        match c.format {
            ApiFormat::OpenAi => (
                vec![("Authorization", format!("Bearer {}", secret.expose()))],
                json!({ "model": c.model, "messages": messages, "temperature": 0, "max_tokens": c.max_tokens }),
            ),
            ApiFormat::Anthropic => (
                vec![("x-api-key", secret.expose().to_owned()), ("anthropic-version", "2023-06-01".into())],
                json!({ "model": c.model, "messages": messages, "temperature": 0, "max_tokens": c.max_tokens }),
            ),
        }
    }

    fn extract(&self, body: &str) -> Result<String> {
        let v: Value = serde_json::from_str(body)?;
        let text = match self.config.format {
            ApiFormat::OpenAi => v["choices"][0]["message"]["content"].as_str().map(str::to_owned),
            ApiFormat::Anthropic => v["content"].as_array().map(|blocks| {
                blocks
                    .iter()
                    .filter(|b| b["type"] == "text")
                    .filter_map(|b| b["text"].as_str())
                    .collect::<String>()
            }),
        };
        text.ok_or_else(|| Error::Provider("response has no completion text".into()))
    }
}

fn transient(status: u16) -> bool {
    status == 408 || status == 429 || status >= 500
}

impl ChatModel for Provider {
    fn model_name(&self) -> &str {
        &self.config.model
    }

    fn query(&self, prompt: &str) -> Result<ChatResponse> {
        let model = &self.config.model;
        if let Some(cache) = &self.cache {
            if let Some((text, latency_ms)) = cache.get(model, prompt)? {
                return Ok(ChatResponse {
                    text,
                    cached: true,
                    retries: 0,
                    latency_ms,
                });
            }
        }
        if self.config.offline {
            return Err(Error::Provider("offline mode and no cached response".into()));
        }
        let secret = self
            .secret
            .as_ref()
            .ok_or_else(|| Error::Auth(format!("environment variable {} is not set", self.config.credential_env)))?;
        let (headers, body) = self.request(prompt, secret);
        let headers: Vec<(&str, &str)> = headers.iter().map(|(k, v)| (*k, v.as_str())).collect();
        let body = body.to_string();
        let timeout = Duration::from_secs(self.config.timeout_secs);
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let backoff = self.config.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(backoff));
            }
            self.limiter.acquire();
            self.calls.fetch_add(1, Ordering::SeqCst);
            let start = Instant::now();
            match self.transport.post(&self.config.endpoint, &headers, &body, timeout) {
                Ok(r) if (200..300).contains(&r.status) => {
                    let latency_ms = start.elapsed().as_secs_f64() * 1e3;
                    let text = self.extract(&r.body)?;
                    if let Some(cache) = &self.cache {
                        cache.put(model, prompt, &text, latency_ms)?;
                    }
                    return Ok(ChatResponse {
                        text,
                        cached: false,
                        retries: attempt,
                        latency_ms,
                    });
                }
                Ok(r) if r.status == 401 || r.status == 403 => {
                    return Err(Error::Auth(format!("{} rejected the credential (HTTP {})", self.config.endpoint, r.status)));
                }
                Ok(r) if transient(r.status) => last = format!("HTTP {}", r.status),
                Ok(r) => return Err(Error::Provider(format!("HTTP {}: {}", r.status, truncate(&r.body)))),
                Err(e) => last = e,
            }
            log::warn!("{model}: attempt {} failed: {last}", attempt + 1);
        }
        Err(Error::Provider(format!(
            "retries exhausted after {} attempts: {last}",
            self.config.max_retries + 1
        )))
    }

    fn network_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(200) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
