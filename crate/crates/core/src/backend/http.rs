//! Chat-completions HTTP client, and a small server exposing any [`Backend`]
//! over the same protocol.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::wire::{self, ChatRequest, ChatResponse, Choice, ChoiceLogprobs, LogprobContent, ResponseMessage};
use super::{Backend, BackendError, Completion, GenRequest, Message, Role, TokenLogprob};

/// How forced output prefixes reach the endpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixMode {
    /// Trailing assistant message continued by the server.
    #[default]
    Continue,
    /// Prefix embedded in the user message and prepended to outputs.
    Emulate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL up to and excluding `/chat/completions`, e.g. `http://host:8000/v1`.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding a bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub prefix_mode: PrefixMode,
    #[serde(default = "default_logprobs")]
    pub logprobs: bool,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

fn default_logprobs() -> bool {
    true
}

fn default_timeout() -> f64 {
    120.0
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: None,
            prefix_mode: PrefixMode::Continue,
            logprobs: true,
            timeout_secs: default_timeout(),
        }
    }
}

pub struct HttpBackend {
    id: String,
    config: HttpConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| BackendError::Usage(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { id: format!("{}@{}", config.model, config.base_url), config, api_key, agent })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn wire_request(&self, req: &GenRequest) -> ChatRequest {
        let mut messages = req.messages.clone();
        let mut continue_final_message = false;
        if let Some(prefix) = &req.output_prefix {
            match self.config.prefix_mode {
                PrefixMode::Continue => {
                    messages.push(Message { role: Role::Assistant, content: prefix.clone() });
                    continue_final_message = true;
                }
                PrefixMode::Emulate => {
                    let note = format!("\n\nBegin your response with exactly: {prefix}");
                    match messages.iter_mut().rev().find(|m| m.role == Role::User) {
                        Some(m) => m.content.push_str(&note),
                        None => messages.push(Message { role: Role::User, content: note.trim_start().to_string() }),
                    }
                }
            }
        }
        ChatRequest {
            model: self.config.model.clone(),
            messages,
            n: req.n,
            temperature: req.temperature,
            seed: Some(req.seed),
            max_tokens: Some(req.max_tokens),
            logprobs: req.want_logprobs,
            top_logprobs: req.want_logprobs.then_some(20),
            continue_final_message,
            add_generation_prompt: !continue_final_message,
        }
    }

    fn completion(&self, req: &GenRequest, choice: &Choice) -> Completion {
        let content = choice.message.content.clone().unwrap_or_default();
        let mut entries: Option<Vec<TokenLogprob>> = choice
            .logprobs
            .as_ref()
            .and_then(|l| l.content.as_ref())
            .map(|c| c.iter().map(TokenLogprob::from).collect());
        let text = match &req.output_prefix {
            None => content,
            Some(prefix) => {
                let continuation =
                    if self.config.prefix_mode == PrefixMode::Emulate && content.starts_with(prefix.as_str()) {
                        entries = entries.map(|e| wire::strip_leading(&e, prefix.len()));
                        content[prefix.len()..].to_string()
                    } else {
                        content
                    };
                entries = entries.map(|mut e| {
                    e.insert(0, TokenLogprob { token: prefix.clone(), logprob: 0.0, top: vec![] });
                    e
                });
                format!("{prefix}{continuation}")
            }
        };
        Completion {
            text,
            token_logprobs: if req.want_logprobs { entries } else { None },
            finish_reason: choice.finish_reason.clone().unwrap_or_else(|| "stop".into()),
        }
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, req: &GenRequest) -> Result<Vec<Completion>, BackendError> {
        let mut call = self.agent.post(&self.endpoint()).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call.send_json(self.wire_request(req)).map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| BackendError::Transport(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(BackendError::Transport(format!("HTTP {status}: {}", snippet(&body))));
        }
        if status != 200 {
            return Err(BackendError::Protocol(format!("HTTP {status}: {}", snippet(&body))));
        }
        let parsed: ChatResponse =
            serde_json::from_str(&body).map_err(|e| BackendError::Protocol(format!("bad response body: {e}")))?;
        if req.want_logprobs
            && parsed.choices.iter().any(|c| c.logprobs.as_ref().and_then(|l| l.content.as_ref()).is_none())
        {
            return Err(BackendError::Protocol("logprobs requested but missing from response".into()));
        }
        let mut choices = parsed.choices;
        choices.sort_by_key(|c| c.index);
        Ok(choices.iter().map(|c| self.completion(req, c)).collect())
    }

    fn supports_logprobs(&self) -> bool {
        self.config.logprobs
    }
}

fn snippet(body: &str) -> String {
    body.chars().take(200).collect()
}

/// A running protocol server; stops when dropped.
pub struct ServerHandle {
    base_url: String,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    /// Base URL for [`HttpConfig::base_url`].
    pub fn base_url(&self) -> &str {
        &self.base_url
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: ErrorDetail,
}

#[derive(Serialize)]
struct ErrorDetail {
    message: String,
}

fn json_response(status: u16, body: &impl Serialize) -> tiny_http::Response<std::io::Cursor<Vec<u8>>> {
    let bytes = serde_json::to_vec(body).expect("response serializes");
    tiny_http::Response::from_data(bytes)
        .with_status_code(status)
        .with_header(tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header"))
}

fn handle(backend: &dyn Backend, body: &str) -> (u16, serde_json::Value) {
    let err = |status: u16, message: String| {
        (status, serde_json::to_value(ErrorBody { error: ErrorDetail { message } }).unwrap())
    };
    let mut chat: ChatRequest = match serde_json::from_str(body) {
        Ok(c) => c,
        Err(e) => return err(400, format!("invalid request: {e}")),
    };
    let prefix = match chat.messages.last() {
        Some(m) if chat.continue_final_message && m.role == Role::Assistant => chat.messages.pop().map(|m| m.content),
        _ => None,
    };
    let req = GenRequest {
        model_ref: chat.model.clone(),
        messages: chat.messages,
        n: chat.n,
        temperature: chat.temperature,
        seed: chat.seed.unwrap_or(0),
        output_prefix: prefix.clone(),
        want_logprobs: chat.logprobs,
        max_tokens: chat.max_tokens.unwrap_or(512),
    };
    let completions = match backend.generate(&req) {
        Ok(c) => c,
        Err(e @ (BackendError::Usage(_) | BackendError::Unsupported(_))) => return err(400, e.to_string()),
        Err(e @ BackendError::Transport(_)) => return err(503, e.to_string()),
        Err(e) => return err(500, e.to_string()),
    };
    let skip = prefix.as_ref().map_or(0, String::len);
    let choices = completions
        .iter()
        .enumerate()
        .map(|(i, c)| Choice {
            index: i as u32,
            message: ResponseMessage {
                role: "assistant".into(),
                content: Some(c.text.get(skip..).unwrap_or("").to_string()),
            },
            logprobs: c.token_logprobs.as_ref().map(|entries| ChoiceLogprobs {
                content: Some(wire::strip_leading(entries, skip).iter().map(LogprobContent::from).collect()),
            }),
            finish_reason: Some(c.finish_reason.clone()),
        })
        .collect();
    let resp =
        ChatResponse { id: format!("cmpl-{}", &crate::seed::content_hash(body)[..12]), model: chat.model, choices };
    (200, serde_json::to_value(resp).expect("response serializes"))
}

/// Serve `backend` on `addr` (e.g. `127.0.0.1:0`) at `/v1/chat/completions`.
/// Continuation requests return only the continuation, like hosted servers.
pub fn serve_backend(backend: Arc<dyn Backend>, addr: &str) -> std::io::Result<ServerHandle> {
    let server =
        tiny_http::Server::http(addr).map_err(|e| std::io::Error::new(std::io::ErrorKind::AddrInUse, e.to_string()))?;
    let port = server
        .server_addr()
        .to_ip()
        .map(|a| a.port())
        .ok_or_else(|| std::io::Error::other("server is not bound to an IP address"))?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = stop.clone();
    let thread = std::thread::spawn(move || {
        while !stop_flag.load(Ordering::SeqCst) {
            let mut request = match server.recv_timeout(Duration::from_millis(50)) {
                Ok(Some(r)) => r,
                Ok(None) => continue,
                Err(_) => break,
            };
            let backend = backend.clone();
            std::thread::spawn(move || {
                let path = request.url().split('?').next().unwrap_or("").to_string();
                let (status, body) = if *request.method() != tiny_http::Method::Post {
                    (405, serde_json::json!({"error": {"message": "use POST"}}))
                } else if path != "/v1/chat/completions" && path != "/chat/completions" {
                    (404, serde_json::json!({"error": {"message": format!("no route {path}")}}))
                } else {
                    let mut body = String::new();
                    match request.as_reader().read_to_string(&mut body) {
                        Ok(_) => handle(backend.as_ref(), &body),
                        Err(e) => (400, serde_json::json!({"error": {"message": e.to_string()}})),
                    }
                };
                let _ = request.respond(json_response(status, &body));
            });
        }
    });
    Ok(ServerHandle { base_url: format!("http://127.0.0.1:{port}/v1"), stop, thread: Some(thread) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{GeneratorScenario, MockGenerator, Scenario};
    use crate::backend::{type_distribution, Client, RetryPolicy};
    use crate::supplement::OPEN_PREFIX;

    fn mock() -> Arc<MockGenerator> {
        let mut s = Scenario {
            seed: 1,
            generator: GeneratorScenario {
                distribution: [("summary", 0.4), ("hint", 0.3), ("cot", 0.3)]
                    .iter()
                    .map(|(k, p)| (k.to_string(), *p))
                    .collect(),
                logprobs: true,
            },
            actor: Default::default(),
        };
        s.canonicalize().unwrap();
        Arc::new(MockGenerator::new(&s))
    }

    #[test]
    fn round_trip_matches_in_process_backend() {
        let inner = mock();
        let server = serve_backend(inner.clone(), "127.0.0.1:0").unwrap();
        let http = HttpBackend::new(HttpConfig::new(server.base_url(), "policy")).unwrap();
        for prefix in [None, Some(OPEN_PREFIX), Some("{\"summary\": \"")] {
            let mut req =
                GenRequest::user("x", "Count the rows.\n\nPlease help.").n(2).temperature(1.0).seed(4).logprobs(true);
            req.output_prefix = prefix.map(String::from);
            assert_eq!(http.generate(&req).unwrap(), inner.generate(&req).unwrap());
        }
    }

    #[test]
    fn type_distribution_over_http() {
        let server = serve_backend(mock(), "127.0.0.1:0").unwrap();
        let client = Client::new(Arc::new(HttpBackend::new(HttpConfig::new(server.base_url(), "policy")).unwrap()));
        let d = type_distribution(&client, "q", 0).unwrap();
        assert!((d["summary"] - 0.4).abs() < 1e-9 && (d["cot"] - 0.3).abs() < 1e-9);
    }

    #[test]
    fn emulated_prefix_is_prepended_once() {
        struct Echo;
        impl Backend for Echo {
            fn id(&self) -> &str {
                "echo"
            }
            fn generate(&self, req: &GenRequest) -> Result<Vec<Completion>, BackendError> {
                // a model that obeys the instruction by repeating the prefix
                let text = req.user_text().rsplit("exactly: ").next().unwrap_or("").to_string() + "tail\"}";
                Ok(vec![Completion { text, token_logprobs: None, finish_reason: "stop".into() }])
            }
            fn supports_logprobs(&self) -> bool {
                false
            }
        }
        let server = serve_backend(Arc::new(Echo), "127.0.0.1:0").unwrap();
        let mut cfg = HttpConfig::new(server.base_url(), "m");
        cfg.prefix_mode = PrefixMode::Emulate;
        let http = HttpBackend::new(cfg).unwrap();
        let out = http.generate(&GenRequest::user("m", "q").prefix("{\"hint\": \"")).unwrap();
        assert_eq!(out[0].text, "{\"hint\": \"tail\"}");
    }

    #[test]
    fn status_codes_map_to_error_kinds() {
        let server = serve_backend(mock(), "127.0.0.1:0").unwrap();
        let http = HttpBackend::new(HttpConfig::new(server.base_url(), "m")).unwrap();
        assert!(matches!(http.generate(&GenRequest::user("m", "q").n(0)), Err(BackendError::Protocol(_))));

        let bad_route = HttpBackend::new(HttpConfig::new(format!("{}/nope", server.base_url()), "m")).unwrap();
        assert!(matches!(bad_route.generate(&GenRequest::user("m", "q")), Err(BackendError::Protocol(_))));

        drop(server);
        let dead = HttpBackend::new(HttpConfig::new("http://127.0.0.1:9/v1", "m")).unwrap();
        let client = Client::with_options(
            Arc::new(dead),
            RetryPolicy { attempts: 2, base_delay: Duration::from_millis(1) },
            1,
            None,
        );
        assert!(matches!(client.generate(&GenRequest::user("m", "q")), Err(BackendError::Transport(_))));
        assert_eq!(client.call_count(), 2);
    }

    #[test]
    fn missing_api_key_env_is_a_config_error() {
        let mut cfg = HttpConfig::new("http://127.0.0.1:9/v1", "m");
        cfg.api_key_env = Some("SGT_TEST_SURELY_UNSET_KEY".into());
        assert!(matches!(HttpBackend::new(cfg), Err(BackendError::Usage(_))));
    }
}
