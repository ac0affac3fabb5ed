//! Model endpoints: request/response types, the [`Backend`] trait, a shared
//! [`Client`] (retries, bounded concurrency, response cache), and type
//! probing from indicator-position log-probabilities.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::supplement::{SupplementType, OPEN_PREFIX};

pub mod conformance;
pub mod http;
pub mod mock;
pub mod wire;

pub use http::{serve_backend, HttpBackend, HttpConfig, PrefixMode, ServerHandle};
pub use mock::{mock_actor_judge, ActorScenario, GeneratorScenario, MockActor, MockGenerator, Scenario, Trigger};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub model_ref: String,
    pub messages: Vec<Message>,
    pub n: u32,
    pub temperature: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_prefix: Option<String>,
    pub want_logprobs: bool,
    pub max_tokens: u32,
}

impl GenRequest {
    /// Single user turn, one sample, temperature 0.
    pub fn user(model_ref: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            model_ref: model_ref.into(),
            messages: vec![Message { role: Role::User, content: text.into() }],
            n: 1,
            temperature: 0.0,
            seed: 0,
            output_prefix: None,
            want_logprobs: false,
            max_tokens: 512,
        }
    }

    pub fn n(mut self, n: u32) -> Self {
        self.n = n;
        self
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn prefix(mut self, prefix: impl Into<String>) -> Self {
        self.output_prefix = Some(prefix.into());
        self
    }

    pub fn logprobs(mut self, on: bool) -> Self {
        self.want_logprobs = on;
        self
    }

    pub fn max_tokens(mut self, m: u32) -> Self {
        self.max_tokens = m;
        self
    }

    /// Text of the last user message.
    pub fn user_text(&self) -> &str {
        self.messages.iter().rev().find(|m| m.role == Role::User).map(|m| m.content.as_str()).unwrap_or("")
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.n == 0 {
            return Err(BackendError::Usage("n must be at least 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::Usage(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        Ok(())
    }

    fn cache_key(&self, endpoint: &str) -> String {
        let body = serde_json::to_string(&(endpoint, self)).expect("request serializes");
        crate::seed::content_hash(body)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
    /// Alternatives at this position, most probable first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub top: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    /// Full output, including the forced prefix when one was requested.
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    pub finish_reason: String,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("unsupported capability: {0}")]
    Unsupported(String),
    #[error("bad request: {0}")]
    Usage(String),
}

impl BackendError {
    fn retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

/// A model endpoint. Implementations must be safe to call concurrently.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, req: &GenRequest) -> Result<Vec<Completion>, BackendError>;
    fn supports_logprobs(&self) -> bool;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendHealth {
    pub endpoint: String,
    pub consecutive_failures: u32,
    pub last_latency: Option<Duration>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay: Duration::from_millis(500) }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let base = self.base_delay.mul_f64(2f64.powi(attempt as i32));
        base.mul_f64(rand::rng().random_range(0.5..1.5))
    }
}

/// Counting semaphore.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
    }

    fn release(&self) {
        *self.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.cv.notify_one();
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    completions: Vec<Completion>,
}

/// Append-only response cache keyed by request content hash.
#[derive(Debug)]
pub struct ResponseCache {
    path: PathBuf,
    entries: Mutex<HashMap<String, Vec<Completion>>>,
}

impl ResponseCache {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                // a torn trailing line from an interrupted run is skipped
                if let Ok(entry) = serde_json::from_str::<CacheLine>(&line) {
                    entries.insert(entry.key, entry.completions);
                }
            }
        } else if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Ok(Self { path: path.to_path_buf(), entries: Mutex::new(entries) })
    }

    fn get(&self, key: &str) -> Option<Vec<Completion>> {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).get(key).cloned()
    }

    fn put(&self, key: String, completions: &[Completion]) {
        let mut entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        let line = serde_json::to_string(&CacheLine { key: key.clone(), completions: completions.to_vec() })
            .expect("cache line serializes");
        let written =
            OpenOptions::new().create(true).append(true).open(&self.path).and_then(|mut f| writeln!(f, "{line}"));
        if let Err(e) = written {
            log::warn!("response cache {}: {e}", self.path.display());
        }
        entries.insert(key, completions.to_vec());
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Shareable handle on one endpoint: retries, an in-flight limit and an
/// optional response cache. Cheap to clone.
#[derive(Clone)]
pub struct Client {
    inner: Arc<ClientInner>,
}

struct ClientInner {
    backend: Arc<dyn Backend>,
    retry: RetryPolicy,
    limiter: Limiter,
    cache: Option<ResponseCache>,
    health: Mutex<BackendHealth>,
    calls: AtomicU64,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

impl std::fmt::Debug for Client {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Client({})", self.inner.backend.id())
    }
}

impl Client {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self::with_options(backend, RetryPolicy::default(), 8, None)
    }

    pub fn with_options(
        backend: Arc<dyn Backend>,
        retry: RetryPolicy,
        max_in_flight: usize,
        cache: Option<ResponseCache>,
    ) -> Self {
        let endpoint = backend.id().to_string();
        Self {
            inner: Arc::new(ClientInner {
                backend,
                retry,
                limiter: Limiter::new(max_in_flight),
                cache,
                health: Mutex::new(BackendHealth { endpoint, consecutive_failures: 0, last_latency: None }),
                calls: AtomicU64::new(0),
                in_flight: AtomicUsize::new(0),
                peak_in_flight: AtomicUsize::new(0),
            }),
        }
    }

    pub fn id(&self) -> &str {
        self.inner.backend.id()
    }

    pub fn supports_logprobs(&self) -> bool {
        self.inner.backend.supports_logprobs()
    }

    /// Requests sent to the endpoint (cache hits excluded).
    pub fn call_count(&self) -> u64 {
        self.inner.calls.load(Ordering::SeqCst)
    }

    /// Highest number of simultaneous in-flight requests observed.
    pub fn peak_in_flight(&self) -> usize {
        self.inner.peak_in_flight.load(Ordering::SeqCst)
    }

    pub fn health(&self) -> BackendHealth {
        self.inner.health.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn generate(&self, req: &GenRequest) -> Result<Vec<Completion>, BackendError> {
        req.validate()?;
        let key = req.cache_key(self.id());
        if let Some(hit) = self.inner.cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok(hit);
        }
        if req.want_logprobs && !self.supports_logprobs() {
            return Err(BackendError::Unsupported(format!("{} does not return logprobs", self.id())));
        }
        let mut attempt = 0;
        loop {
            let result = self.call_once(req);
            match result {
                Ok(out) => {
                    if let Some(prefix) = &req.output_prefix {
                        if let Some(bad) = out.iter().find(|c| !c.text.starts_with(prefix.as_str())) {
                            return Err(BackendError::Protocol(format!(
                                "completion does not start with forced prefix: {:?}",
                                bad.text
                            )));
                        }
                    }
                    if out.len() != req.n as usize {
                        return Err(BackendError::Protocol(format!(
                            "asked for {} completions, got {}",
                            req.n,
                            out.len()
                        )));
                    }
                    if let Some(cache) = &self.inner.cache {
                        cache.put(key, &out);
                    }
                    return Ok(out);
                }
                Err(e) if e.retryable() && attempt + 1 < self.inner.retry.attempts => {
                    let wait = self.inner.retry.delay(attempt);
                    log::warn!("{}: {e}; retrying in {wait:?}", self.id());
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn call_once(&self, req: &GenRequest) -> Result<Vec<Completion>, BackendError> {
        let inner = &self.inner;
        inner.limiter.acquire();
        let now = inner.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        inner.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        inner.calls.fetch_add(1, Ordering::SeqCst);
        let start = Instant::now();
        let result = inner.backend.generate(req);
        inner.in_flight.fetch_sub(1, Ordering::SeqCst);
        inner.limiter.release();

        let mut health = inner.health.lock().unwrap_or_else(|e| e.into_inner());
        health.last_latency = Some(start.elapsed());
        if result.is_ok() {
            health.consecutive_failures = 0;
        } else {
            health.consecutive_failures += 1;
        }
        result
    }

    /// Convenience: the text of a single completion.
    pub fn complete(&self, req: &GenRequest) -> Result<String, BackendError> {
        let mut out = self.generate(req)?;
        Ok(out.swap_remove(0).text)
    }
}

/// Map `f` over `items` on at most `limit` worker threads, keeping input order.
pub fn fan_out<T, R, F>(items: &[T], limit: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(limit.max(1)).build().expect("worker pool");
    pool.install(|| items.par_iter().map(&f).collect())
}

/// The logprob entry that follows `prefix_len` bytes of forced text.
fn entry_after_prefix(entries: &[TokenLogprob], prefix_len: usize) -> Option<&TokenLogprob> {
    let mut consumed = 0;
    for e in entries {
        if consumed >= prefix_len {
            return Some(e);
        }
        consumed += e.token.len();
    }
    None
}

/// Leading key text of an object continuation: everything up to the closing
/// quote, or `None` if the quote was not reached.
fn closed_key(fragment: &str) -> Option<&str> {
    fragment.find('"').map(|i| &fragment[..i])
}

/// Probability of each supplement type the generator would open its output
/// with, read from the alternatives at the indicator position after `{"`.
///
/// Alternatives that stop mid-key are completed with greedy continuations.
/// Returned keys are type keys (`background`, not `background_knowledge`).
pub fn type_distribution(client: &Client, prompt: &str, seed: u64) -> Result<BTreeMap<String, f64>, BackendError> {
    if !client.supports_logprobs() {
        return Err(BackendError::Unsupported(format!("{} does not return logprobs", client.id())));
    }
    let req = GenRequest::user(client.id(), prompt).seed(seed).prefix(OPEN_PREFIX).logprobs(true).max_tokens(16);
    let completion = client.generate(&req)?.swap_remove(0);
    let entries =
        completion.token_logprobs.ok_or_else(|| BackendError::Protocol("logprobs requested but missing".into()))?;
    let at = entry_after_prefix(&entries, OPEN_PREFIX.len())
        .ok_or_else(|| BackendError::Protocol("no token after the forced prefix".into()))?;
    let alternatives: Vec<(String, f64)> =
        if at.top.is_empty() { vec![(at.token.clone(), at.logprob)] } else { at.top.clone() };

    let mut mass: BTreeMap<String, f64> = BTreeMap::new();
    for (token, logprob) in alternatives {
        let key = match closed_key(&token) {
            Some(k) => k.to_string(),
            None => {
                let cont = GenRequest::user(client.id(), prompt)
                    .seed(seed)
                    .prefix(format!("{OPEN_PREFIX}{token}"))
                    .max_tokens(16);
                let text = client.complete(&cont)?;
                match closed_key(&text[OPEN_PREFIX.len()..]) {
                    Some(k) => k.to_string(),
                    None => {
                        log::debug!("greedy completion of {token:?} never closed the key");
                        continue;
                    }
                }
            }
        };
        match SupplementType::from_key(&key) {
            Ok(t) => *mass.entry(t.key()).or_default() += logprob.exp(),
            Err(_) => log::debug!("ignoring unusable indicator {key:?}"),
        }
    }
    let total: f64 = mass.values().sum();
    if total <= 0.0 {
        return Err(BackendError::Protocol("no usable indicator alternatives".into()));
    }
    mass.values_mut().for_each(|p| *p /= total);
    Ok(mass)
}
