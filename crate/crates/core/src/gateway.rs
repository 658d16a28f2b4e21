//! Provider-agnostic chat-completion client with record/replay caching.
//!
//! In [`Mode::Replay`] every response comes from the cache file and no
//! transport is consulted; a miss is a [`Error::CacheMiss`]. [`Mode::Record`]
//! performs the round-trip and appends the exchange to the cache file.
//!
//! Cache file layout, one JSON object per line:
//!
//! ```text
//! {"format":"humbench-llm-cache","version":1}
//! {"key":"<sha256 hex>","model_id":"...","request":{...},"response":{...},"recorded_at":1718000000}
//! ```
//!
//! Header lines may repeat (concatenated files); for a repeated key the first
//! entry wins and later ones are ignored.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use log::{debug, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::prompts::{Conversation, Role};

pub const CACHE_FORMAT: &str = "humbench-llm-cache";
pub const CACHE_VERSION: u32 = 1;

pub const ENV_API_KEY: &str = "HUMBENCH_API_KEY";
pub const ENV_BASE_URL: &str = "HUMBENCH_BASE_URL";
pub const ENV_API_PATH: &str = "HUMBENCH_API_PATH";
const DEFAULT_BASE_URL: &str = "https://api.openai.com";
const DEFAULT_API_PATH: &str = "/v1/chat/completions";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Conversation,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    /// Temperature is pinned to zero.
    pub fn new(model_id: impl Into<String>, messages: Conversation) -> Self {
        ChatRequest { model_id: model_id.into(), messages, temperature: 0.0, max_tokens: None }
    }

    /// Content digest over model, messages (role and content), temperature and
    /// max_tokens. Serialized through a key-sorted JSON value, so field order
    /// in any source representation does not matter.
    pub fn cache_key(&self) -> String {
        let messages: Vec<Value> = self
            .messages
            .messages
            .iter()
            .map(|m| json!({ "role": role_str(m.role), "content": m.content }))
            .collect();
        let canonical = json!({
            "model_id": self.model_id,
            "messages": messages,
            "temperature": format!("{:.6}", self.temperature),
            "max_tokens": self.max_tokens,
        });
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }
}

fn role_str(r: Role) -> &'static str {
    match r {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    #[serde(default)]
    pub usage: Usage,
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default)]
    pub provider_meta: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<ChatRequest>,
    pub response: ChatResponse,
    pub recorded_at: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Live,
    Record,
    Replay,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "live" => Ok(Mode::Live),
            "record" => Ok(Mode::Record),
            "replay" => Ok(Mode::Replay),
            _ => Err(Error::InvalidInput(format!("unknown gateway mode `{s}`"))),
        }
    }
}

/// Failure reported by a [`Transport`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportFailure {
    Status { code: u16, body: String },
    Timeout,
    Connect(String),
    Decode(String),
}

impl TransportFailure {
    pub fn retryable(&self) -> bool {
        match self {
            TransportFailure::Status { code, .. } => *code == 429 || (500..600).contains(code),
            TransportFailure::Timeout | TransportFailure::Connect(_) => true,
            TransportFailure::Decode(_) => false,
        }
    }
}

impl std::fmt::Display for TransportFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportFailure::Status { code, body } => write!(f, "HTTP {code}: {body}"),
            TransportFailure::Timeout => f.write_str("request timed out"),
            TransportFailure::Connect(m) => write!(f, "connection failed: {m}"),
            TransportFailure::Decode(m) => write!(f, "bad response body: {m}"),
        }
    }
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest, timeout: Duration) -> std::result::Result<ChatResponse, TransportFailure>;
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Chat-completions style HTTP JSON transport.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(base_url: &str, path: &str, api_key: Option<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| Error::Transport { attempts: 0, message: e.to_string() })?;
        Ok(HttpTransport {
            client,
            url: format!("{}{}", base_url.trim_end_matches('/'), path),
            api_key,
        })
    }

    /// Reads base URL, path and key from the environment.
    pub fn from_env() -> Result<Self> {
        let key = std::env::var(ENV_API_KEY).ok();
        if key.is_none() {
            return Err(Error::InvalidInput(format!("{ENV_API_KEY} is not set")));
        }
        let base = std::env::var(ENV_BASE_URL).unwrap_or_else(|_| DEFAULT_BASE_URL.into());
        let path = std::env::var(ENV_API_PATH).unwrap_or_else(|_| DEFAULT_API_PATH.into());
        Self::new(&base, &path, key)
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest, timeout: Duration) -> std::result::Result<ChatResponse, TransportFailure> {
        let messages: Vec<Value> = request
            .messages
            .messages
            .iter()
            .map(|m| json!({ "role": role_str(m.role), "content": m.content }))
            .collect();
        let mut body = json!({
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
        });
        if let Some(mt) = request.max_tokens {
            body["max_tokens"] = json!(mt);
        }
        let mut req = self.client.post(&self.url).timeout(timeout).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let started = Instant::now();
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                TransportFailure::Timeout
            } else {
                TransportFailure::Connect(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| TransportFailure::Decode(e.to_string()))?;
        if !status.is_success() {
            return Err(TransportFailure::Status { code: status.as_u16(), body: text });
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| TransportFailure::Decode(e.to_string()))?;
        parse_completion(&value, started.elapsed(), request.max_tokens)
    }
}

fn parse_completion(
    value: &Value,
    elapsed: Duration,
    max_tokens: Option<u32>,
) -> std::result::Result<ChatResponse, TransportFailure> {
    let choice = &value["choices"][0];
    let text = choice["message"]["content"]
        .as_str()
        .ok_or_else(|| TransportFailure::Decode("missing choices[0].message.content".into()))?
        .to_string();
    let u = &value["usage"];
    let usage = Usage {
        prompt_tokens: u["prompt_tokens"].as_u64().unwrap_or(0),
        completion_tokens: u["completion_tokens"].as_u64().unwrap_or(0),
        total_tokens: u["total_tokens"].as_u64().unwrap_or(0),
    };
    let mut meta = BTreeMap::new();
    for key in ["id", "model", "system_fingerprint"] {
        if !value[key].is_null() {
            meta.insert(key.to_string(), value[key].clone());
        }
    }
    if !choice["finish_reason"].is_null() {
        meta.insert("finish_reason".into(), choice["finish_reason"].clone());
    }
    meta.insert(
        "max_tokens".into(),
        max_tokens.map_or(json!("provider default"), |m| json!(m)),
    );
    Ok(ChatResponse { text, usage, latency_ms: elapsed.as_millis() as u64, provider_meta: meta })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub factor: f64,
    pub max_attempts: u32,
    /// Upper bound of the random extra delay, as a fraction of the backoff.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { base: Duration::from_secs(1), factor: 2.0, max_attempts: 5, jitter: 0.1 }
    }
}

impl RetryPolicy {
    /// Backoff before retry number `retry` (1-based), without jitter.
    pub fn backoff(&self, retry: u32) -> Duration {
        self.base.mul_f64(self.factor.powi(retry as i32 - 1))
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub model_id: String,
    pub max_in_flight: usize,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub max_tokens: Option<u32>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            model_id: "gpt-4-turbo-2024-04-09".into(),
            max_in_flight: 4,
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            max_tokens: None,
        }
    }
}

/// Append-only response cache: an immutable snapshot loaded at open time plus
/// a synchronized delta of entries recorded by this process.
pub struct ResponseCache {
    path: PathBuf,
    snapshot: HashMap<String, CacheEntry>,
    delta: RwLock<HashMap<String, CacheEntry>>,
    writer: Mutex<Option<File>>,
}

impl ResponseCache {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut snapshot = HashMap::new();
        if path.exists() {
            let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let v: Value = serde_json::from_str(&line)
                    .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?;
                if v.get("format").is_some() {
                    check_header(&v, &path)?;
                    continue;
                }
                let entry: CacheEntry = serde_json::from_value(v)
                    .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?;
                snapshot.entry(entry.key.clone()).or_insert(entry);
            }
        }
        Ok(ResponseCache { path, snapshot, delta: RwLock::new(HashMap::new()), writer: Mutex::new(None) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        if let Some(e) = self.snapshot.get(key) {
            return Some(e.clone());
        }
        self.delta.read().expect("cache lock").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.snapshot.len() + self.delta.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends `entry` unless its key is already present.
    pub fn insert(&self, entry: CacheEntry) -> Result<()> {
        if self.snapshot.contains_key(&entry.key) {
            return Ok(());
        }
        let mut writer = self.writer.lock().expect("cache writer lock");
        if self.delta.read().expect("cache lock").contains_key(&entry.key) {
            return Ok(());
        }
        if writer.is_none() {
            let fresh = !self.path.exists() || std::fs::metadata(&self.path).map(|m| m.len() == 0).unwrap_or(true);
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)
                .map_err(|e| Error::io(&self.path, e))?;
            if fresh {
                writeln!(f, "{}", json!({ "format": CACHE_FORMAT, "version": CACHE_VERSION }))
                    .map_err(|e| Error::io(&self.path, e))?;
            }
            *writer = Some(f);
        }
        let f = writer.as_mut().expect("writer opened above");
        writeln!(f, "{}", serde_json::to_string(&entry)?).map_err(|e| Error::io(&self.path, e))?;
        f.flush().map_err(|e| Error::io(&self.path, e))?;
        self.delta.write().expect("cache lock").insert(entry.key.clone(), entry);
        Ok(())
    }
}

fn check_header(v: &Value, path: &Path) -> Result<()> {
    if v["format"] != CACHE_FORMAT {
        return Err(Error::Parse(format!("{}: not a {CACHE_FORMAT} file", path.display())));
    }
    match v["version"].as_u64() {
        Some(ver) if ver == CACHE_VERSION as u64 => Ok(()),
        other => Err(Error::Parse(format!("{}: unsupported cache version {other:?}", path.display()))),
    }
}

/// Counting semaphore bounding concurrent requests.
struct Limiter {
    max: usize,
    state: Mutex<usize>,
    cv: Condvar,
    peak: AtomicUsize,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(max: usize) -> Self {
        Limiter { max: max.max(1), state: Mutex::new(0), cv: Condvar::new(), peak: AtomicUsize::new(0) }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.state.lock().expect("limiter lock");
        while *n >= self.max {
            n = self.cv.wait(n).expect("limiter lock");
        }
        *n += 1;
        self.peak.fetch_max(*n, Ordering::SeqCst);
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.state.lock().expect("limiter lock");
        *n -= 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    /// Calls to [`Gateway::complete`].
    pub calls: usize,
    /// Transport invocations, retries included.
    pub network_attempts: usize,
    pub cache_hits: usize,
    /// Highest number of simultaneously outstanding requests observed.
    pub peak_in_flight: usize,
}

pub struct Gateway {
    mode: Mode,
    config: GatewayConfig,
    transport: Option<Arc<dyn Transport>>,
    cache: Option<Arc<ResponseCache>>,
    sleeper: Arc<dyn Sleeper>,
    limiter: Limiter,
    calls: AtomicUsize,
    network_attempts: AtomicUsize,
    cache_hits: AtomicUsize,
}

impl Gateway {
    /// Replay-only gateway; it holds no transport at all.
    pub fn replay(config: GatewayConfig, cache: Arc<ResponseCache>) -> Self {
        Self::build(Mode::Replay, config, None, Some(cache))
    }

    pub fn live(config: GatewayConfig, transport: Arc<dyn Transport>) -> Self {
        Self::build(Mode::Live, config, Some(transport), None)
    }

    pub fn record(config: GatewayConfig, transport: Arc<dyn Transport>, cache: Arc<ResponseCache>) -> Self {
        Self::build(Mode::Record, config, Some(transport), Some(cache))
    }

    /// Generic constructor; validates that the mode has what it needs.
    pub fn new(
        mode: Mode,
        config: GatewayConfig,
        transport: Option<Arc<dyn Transport>>,
        cache: Option<Arc<ResponseCache>>,
    ) -> Result<Self> {
        match mode {
            Mode::Replay if cache.is_none() => Err(Error::InvalidInput("replay mode needs a cache file".into())),
            Mode::Record if cache.is_none() => Err(Error::InvalidInput("record mode needs a cache file".into())),
            Mode::Live | Mode::Record if transport.is_none() => {
                Err(Error::InvalidInput("live and record modes need provider credentials".into()))
            }
            _ => Ok(Self::build(mode, config, transport, cache)),
        }
    }

    fn build(
        mode: Mode,
        config: GatewayConfig,
        transport: Option<Arc<dyn Transport>>,
        cache: Option<Arc<ResponseCache>>,
    ) -> Self {
        let transport = if mode == Mode::Replay { None } else { transport };
        Gateway {
            mode,
            limiter: Limiter::new(config.max_in_flight),
            config,
            transport,
            cache,
            sleeper: Arc::new(ThreadSleeper),
            calls: AtomicUsize::new(0),
            network_attempts: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
        }
    }

    pub fn with_sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn model_id(&self) -> &str {
        &self.config.model_id
    }

    pub fn cache(&self) -> Option<&Arc<ResponseCache>> {
        self.cache.as_ref()
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            calls: self.calls.load(Ordering::SeqCst),
            network_attempts: self.network_attempts.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
            peak_in_flight: self.limiter.peak.load(Ordering::SeqCst),
        }
    }

    /// Request for `messages` under the configured model.
    pub fn request(&self, messages: Conversation) -> ChatRequest {
        let mut r = ChatRequest::new(self.config.model_id.clone(), messages);
        r.max_tokens = self.config.max_tokens;
        r
    }

    /// Sends `messages` under the configured model.
    pub fn chat(&self, messages: Conversation) -> Result<ChatResponse> {
        self.complete(&self.request(messages))
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        if request.temperature != 0.0 {
            return Err(Error::InvalidInput("temperature must be 0.0".into()));
        }
        request.messages.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        let key = request.cache_key();
        match self.mode {
            Mode::Replay => {
                let cache = self.cache.as_ref().expect("replay gateway has a cache");
                let entry = cache.get(&key).ok_or(Error::CacheMiss { digest: key })?;
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                Ok(entry.response)
            }
            Mode::Live => self.round_trip(request),
            Mode::Record => {
                let response = self.round_trip(request)?;
                let cache = self.cache.as_ref().expect("record gateway has a cache");
                cache.insert(CacheEntry {
                    key,
                    model_id: request.model_id.clone(),
                    request: Some(request.clone()),
                    response: response.clone(),
                    recorded_at: now_secs(),
                })?;
                Ok(response)
            }
        }
    }

    fn round_trip(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let transport = self.transport.as_ref().expect("live gateway has a transport");
        let policy = self.config.retry;
        let _permit = self.limiter.acquire();
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.network_attempts.fetch_add(1, Ordering::SeqCst);
            match transport.send(request, self.config.timeout) {
                Ok(r) => return Ok(r),
                Err(f) if f.retryable() && attempt < policy.max_attempts => {
                    let backoff = policy.backoff(attempt);
                    let extra = backoff.mul_f64(rand::thread_rng().gen_range(0.0..=policy.jitter));
                    warn!("attempt {attempt} failed ({f}); retrying in {:?}", backoff + extra);
                    self.sleeper.sleep(backoff + extra);
                }
                Err(f) => {
                    debug!("giving up after {attempt} attempt(s): {f}");
                    return Err(Error::Transport { attempts: attempt, message: f.to_string() });
                }
            }
        }
    }
}

fn now_secs() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs() as i64).unwrap_or(0)
}
