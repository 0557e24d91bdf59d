//! Chat-completion clients: a blocking HTTP client for OpenAI-style endpoints
//! with bounded retry, plus fixture record/replay for offline runs.
//!
//! Request body sent to the endpoint:
//!
//! ```json
//! {"model": "...", "messages": [{"role": "system", "content": "..."}], "temperature": 0.0}
//! ```
//!
//! The reply text is read from `choices[0].message.content`. Requests carry
//! `Authorization: Bearer <key>` when a key is configured.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const API_URL_ENV: &str = "STIMUSEL_API_URL";
pub const API_KEY_ENV: &str = "STIMUSEL_API_KEY";

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("empty response from {0}")]
    Empty(String),
    #[error("no fixture for request {key} in {dir}")]
    FixtureMissing { key: String, dir: String },
    #[error("fixture store: {0}")]
    Fixture(String),
    #[error("configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: Value,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: Value::String(text.into()),
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: Value::String(text.into()),
        }
    }

    /// User message carrying text plus an inline PNG (`data:` URL).
    pub fn user_with_image(text: impl Into<String>, png: &[u8]) -> Self {
        use base64::Engine;
        let url = format!(
            "data:image/png;base64,{}",
            base64::engine::general_purpose::STANDARD.encode(png)
        );
        Self {
            role: "user".into(),
            content: json!([
                {"type": "text", "text": text.into()},
                {"type": "image_url", "image_url": {"url": url}},
            ]),
        }
    }

    /// Text content, or the concatenated text parts of multi-part content.
    pub fn text(&self) -> String {
        match &self.content {
            Value::String(s) => s.clone(),
            Value::Array(parts) => parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join("\n"),
            other => other.to_string(),
        }
    }
}

pub trait ChatClient: Send + Sync {
    /// Identifier recorded in provenance, e.g. `gpt-4@https://...`.
    fn id(&self) -> String;

    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ClientError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(attempt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

impl EndpointConfig {
    /// Parses `MODEL` or `MODEL@URL`; the URL falls back to `STIMUSEL_API_URL`.
    pub fn parse(spec: &str) -> Result<Self, ClientError> {
        let (model, url) = match spec.split_once('@') {
            Some((m, u)) => (m.to_owned(), u.to_owned()),
            None => {
                let url = std::env::var(API_URL_ENV).map_err(|_| {
                    ClientError::Config(format!("{spec:?} has no URL and {API_URL_ENV} is unset"))
                })?;
                (spec.to_owned(), url)
            }
        };
        if model.is_empty() || url.is_empty() {
            return Err(ClientError::Config(format!("bad endpoint spec {spec:?}")));
        }
        Ok(Self {
            url,
            model,
            temperature: 0.0,
            timeout_secs: default_timeout(),
        })
    }
}

pub struct HttpChatClient {
    endpoint: EndpointConfig,
    api_key: Option<String>,
    retry: RetryPolicy,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(
        endpoint: EndpointConfig,
        api_key: Option<String>,
        retry: RetryPolicy,
    ) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(endpoint.timeout_secs))
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        Ok(Self {
            endpoint,
            api_key,
            retry,
            http,
        })
    }

    /// Key taken from `STIMUSEL_API_KEY` if set.
    pub fn from_env(endpoint: EndpointConfig) -> Result<Self, ClientError> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(endpoint, key, RetryPolicy::default())
    }

    fn attempt(&self, body: &Value) -> Result<String, (bool, ClientError)> {
        let mut req = self.http.post(&self.endpoint.url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            (
                true,
                ClientError::Transport {
                    attempts: 1,
                    message: e.to_string(),
                },
            )
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            (
                true,
                ClientError::Transport {
                    attempts: 1,
                    message: e.to_string(),
                },
            )
        })?;
        if !status.is_success() {
            let retryable = status.as_u16() == 429 || status.is_server_error();
            return Err((
                retryable,
                ClientError::Status {
                    status: status.as_u16(),
                    body: text,
                },
            ));
        }
        parse_completion(&text).map_err(|e| (false, e))
    }
}

/// Extracts `choices[0].message.content` from a chat-completion response.
pub fn parse_completion(body: &str) -> Result<String, ClientError> {
    let v: Value = serde_json::from_str(body).map_err(|e| ClientError::Malformed(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| ClientError::Malformed("missing choices[0].message.content".into()))
}

impl ChatClient for HttpChatClient {
    fn id(&self) -> String {
        format!("{}@{}", self.endpoint.model, self.endpoint.url)
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ClientError> {
        let body = json!({
            "model": self.endpoint.model,
            "messages": messages,
            "temperature": self.endpoint.temperature,
        });
        let attempts = self.retry.attempts.max(1);
        let mut last = None;
        for attempt in 0..attempts {
            match self.attempt(&body) {
                Ok(text) if text.trim().is_empty() => return Err(ClientError::Empty(self.id())),
                Ok(text) => return Ok(text),
                Err((retryable, err)) => {
                    log::warn!("{}: attempt {} failed: {err}", self.id(), attempt + 1);
                    if !retryable {
                        return Err(err);
                    }
                    last = Some(err);
                    if attempt + 1 < attempts {
                        thread::sleep(self.retry.delay(attempt));
                    }
                }
            }
        }
        Err(match last {
            Some(ClientError::Transport { message, .. }) => {
                ClientError::Transport { attempts, message }
            }
            Some(other) => other,
            None => ClientError::Transport {
                attempts,
                message: "no attempt made".into(),
            },
        })
    }
}

/// Stable key of a request: SHA-256 over the role namespace and the
/// serialized messages.
pub fn request_key(namespace: &str, messages: &[ChatMessage]) -> String {
    let mut h = Sha256::new();
    h.update(namespace.as_bytes());
    h.update([0u8]);
    h.update(serde_json::to_vec(messages).expect("messages serialize"));
    hex::encode(h.finalize())
}

#[derive(Debug, Serialize, Deserialize)]
struct FixtureEntry {
    namespace: String,
    client_id: String,
    messages: Vec<ChatMessage>,
    response: String,
}

/// Directory of `<key>.json` fixtures, one per request.
#[derive(Debug, Clone)]
pub struct FixtureStore {
    dir: PathBuf,
}

impl FixtureStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn lookup(
        &self,
        namespace: &str,
        messages: &[ChatMessage],
    ) -> Result<(String, String), ClientError> {
        let key = request_key(namespace, messages);
        let path = self.path(&key);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ClientError::FixtureMissing {
                    key,
                    dir: self.dir.display().to_string(),
                })
            }
            Err(e) => return Err(ClientError::Fixture(format!("{}: {e}", path.display()))),
        };
        let entry: FixtureEntry = serde_json::from_str(&text)
            .map_err(|e| ClientError::Fixture(format!("{}: {e}", path.display())))?;
        Ok((entry.client_id, entry.response))
    }

    pub fn record(
        &self,
        namespace: &str,
        client_id: &str,
        messages: &[ChatMessage],
        response: &str,
    ) -> Result<(), ClientError> {
        fs::create_dir_all(&self.dir).map_err(|e| ClientError::Fixture(e.to_string()))?;
        let entry = FixtureEntry {
            namespace: namespace.to_owned(),
            client_id: client_id.to_owned(),
            messages: messages.to_vec(),
            response: response.to_owned(),
        };
        let path = self.path(&request_key(namespace, messages));
        let mut text = serde_json::to_string_pretty(&entry)
            .map_err(|e| ClientError::Fixture(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| ClientError::Fixture(format!("{}: {e}", path.display())))
    }
}

/// Answers from recorded fixtures only; never touches the network.
pub struct ReplayClient {
    store: FixtureStore,
    namespace: String,
}

impl ReplayClient {
    pub fn new(store: FixtureStore, namespace: impl Into<String>) -> Self {
        Self {
            store,
            namespace: namespace.into(),
        }
    }
}

impl ChatClient for ReplayClient {
    fn id(&self) -> String {
        format!("replay:{}", self.namespace)
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ClientError> {
        let (_, response) = self.store.lookup(&self.namespace, messages)?;
        if response.trim().is_empty() {
            return Err(ClientError::Empty(self.id()));
        }
        Ok(response)
    }
}

/// Forwards to an inner client and records every successful exchange.
pub struct RecordingClient<C> {
    inner: C,
    store: FixtureStore,
    namespace: String,
}

impl<C: ChatClient> RecordingClient<C> {
    pub fn new(inner: C, store: FixtureStore, namespace: impl Into<String>) -> Self {
        Self {
            inner,
            store,
            namespace: namespace.into(),
        }
    }
}

impl<C: ChatClient> ChatClient for RecordingClient<C> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ClientError> {
        let out = self.inner.complete(messages)?;
        self.store
            .record(&self.namespace, &self.inner.id(), messages, &out)?;
        Ok(out)
    }
}

impl<C: ChatClient + ?Sized> ChatClient for Box<C> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ClientError> {
        (**self).complete(messages)
    }
}

/// Returns the text of the last user message. Handy for dry runs.
#[derive(Debug, Clone, Default)]
pub struct EchoClient;

impl ChatClient for EchoClient {
    fn id(&self) -> String {
        "echo".into()
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ClientError> {
        messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(ChatMessage::text)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| ClientError::Empty(self.id()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Serves the canned `(status, body)` replies in order, one per connection.
    fn serve(
        replies: Vec<(u16, String)>,
    ) -> (String, Arc<AtomicUsize>, thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!(
            "http://{}/v1/chat/completions",
            listener.local_addr().unwrap()
        );
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        let handle = thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                counter.fetch_add(1, Ordering::SeqCst);
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, hits, handle)
    }

    fn completion(text: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(1),
        }
    }

    #[test]
    fn posts_chat_request_and_reads_content() {
        let (url, _, handle) = serve(vec![(200, completion("fear"))]);
        let ep = EndpointConfig {
            url,
            model: "m".into(),
            temperature: 0.0,
            timeout_secs: 5,
        };
        let c = HttpChatClient::new(ep, Some("k".into()), fast_retry()).unwrap();
        assert_eq!(c.complete(&[ChatMessage::user("hi")]).unwrap(), "fear");
        let bodies = handle.join().unwrap();
        let sent: Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent["model"], "m");
        assert_eq!(sent["messages"][0]["content"], "hi");
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (url, hits, handle) = serve(vec![
            (503, "busy".into()),
            (429, "slow down".into()),
            (200, completion("ok")),
        ]);
        let ep = EndpointConfig {
            url,
            model: "m".into(),
            temperature: 0.0,
            timeout_secs: 5,
        };
        let c = HttpChatClient::new(ep, None, fast_retry()).unwrap();
        assert_eq!(c.complete(&[ChatMessage::user("x")]).unwrap(), "ok");
        handle.join().unwrap();
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_bounded_attempts() {
        let (url, hits, handle) = serve(vec![
            (500, "a".into()),
            (500, "b".into()),
            (500, "c".into()),
        ]);
        let ep = EndpointConfig {
            url,
            model: "m".into(),
            temperature: 0.0,
            timeout_secs: 5,
        };
        let c = HttpChatClient::new(ep, None, fast_retry()).unwrap();
        assert!(matches!(
            c.complete(&[ChatMessage::user("x")]),
            Err(ClientError::Status { status: 500, .. })
        ));
        handle.join().unwrap();
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, hits, handle) = serve(vec![(401, "nope".into())]);
        let ep = EndpointConfig {
            url,
            model: "m".into(),
            temperature: 0.0,
            timeout_secs: 5,
        };
        let c = HttpChatClient::new(ep, None, fast_retry()).unwrap();
        assert!(matches!(
            c.complete(&[ChatMessage::user("x")]),
            Err(ClientError::Status { status: 401, .. })
        ));
        handle.join().unwrap();
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn empty_reply_is_an_error() {
        let (url, _, handle) = serve(vec![(200, completion("  "))]);
        let ep = EndpointConfig {
            url,
            model: "m".into(),
            temperature: 0.0,
            timeout_secs: 5,
        };
        let c = HttpChatClient::new(ep, None, fast_retry()).unwrap();
        assert!(matches!(
            c.complete(&[ChatMessage::user("x")]),
            Err(ClientError::Empty(_))
        ));
        handle.join().unwrap();
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let store = FixtureStore::new(dir.path());
        let rec = RecordingClient::new(EchoClient, store.clone(), "summarizer");
        let msgs = [ChatMessage::system("s"), ChatMessage::user("hello")];
        assert_eq!(rec.complete(&msgs).unwrap(), "hello");
        let replay = ReplayClient::new(store.clone(), "summarizer");
        assert_eq!(replay.complete(&msgs).unwrap(), "hello");
        // other namespaces do not share fixtures
        let other = ReplayClient::new(store, "reasoner");
        assert!(matches!(
            other.complete(&msgs),
            Err(ClientError::FixtureMissing { .. })
        ));
    }

    #[test]
    fn endpoint_spec_parsing() {
        let ep = EndpointConfig::parse("gpt-4@http://localhost:1/v1").unwrap();
        assert_eq!(ep.model, "gpt-4");
        assert_eq!(ep.url, "http://localhost:1/v1");
        assert!(EndpointConfig::parse("@http://x").is_err());
    }

    #[test]
    fn malformed_completion() {
        assert!(parse_completion("{}").is_err());
        assert!(parse_completion("not json").is_err());
        assert_eq!(parse_completion(&completion("x")).unwrap(), "x");
    }
}
