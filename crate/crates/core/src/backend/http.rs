//! Blocking HTTP backends for real model endpoints.
//!
//! Chat: `POST {url}` with `{"model", "messages", "temperature",
//! "max_tokens"}`, reply `{"text": ...}`.
//! Embeddings: `POST {url}` with `{"model", "input"}`, reply
//! `{"embedding": [...]}`.
//!
//! Endpoints come from `EVOGRAPH_<ROLE>_URL`, `EVOGRAPH_<ROLE>_TOKEN` and
//! `EVOGRAPH_<ROLE>_MODEL` where `<ROLE>` is `GUIDANCE`, `EXECUTION` or
//! `EMBEDDER`. Retries are handled by [`Backends`](super::Backends).

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatMessage, CompletionRequest, Embedder, LanguageModel};

const TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endpoint {
    pub url: String,
    pub token: Option<String>,
    pub model: String,
}

impl Endpoint {
    /// Reads `EVOGRAPH_{role}_URL` (required), `_TOKEN` and `_MODEL`.
    pub fn from_env(role: &str) -> Result<Self, BackendError> {
        let key = |suffix: &str| format!("EVOGRAPH_{}_{suffix}", role.to_ascii_uppercase());
        let url = std::env::var(key("URL")).map_err(|_| BackendError::NotConfigured(format!("{} is not set", key("URL"))))?;
        Ok(Self {
            url,
            token: std::env::var(key("TOKEN")).ok().filter(|t| !t.is_empty()),
            model: std::env::var(key("MODEL")).unwrap_or_else(|_| "default".into()),
        })
    }

    fn post<T: Serialize>(&self, agent: &ureq::Agent, body: &T) -> Result<String, BackendError> {
        let payload = serde_json::to_string(body).map_err(|e| BackendError::Malformed(e.to_string()))?;
        let mut req = agent.post(&self.url).set("Content-Type", "application/json");
        if let Some(token) = &self.token {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        match req.send_string(&payload) {
            Ok(resp) => resp.into_string().map_err(|e| BackendError::Malformed(e.to_string())),
            Err(ureq::Error::Status(status, resp)) => Err(BackendError::Status {
                status,
                body: resp.into_string().unwrap_or_default(),
            }),
            Err(ureq::Error::Transport(t)) => Err(BackendError::Unreachable(t.to_string())),
        }
    }
}

fn agent() -> ureq::Agent {
    ureq::AgentBuilder::new().timeout(TIMEOUT).build()
}

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatReply {
    text: String,
}

pub struct HttpModel {
    endpoint: Endpoint,
    agent: ureq::Agent,
}

impl HttpModel {
    pub fn new(endpoint: Endpoint) -> Self {
        Self { endpoint, agent: agent() }
    }
}

impl LanguageModel for HttpModel {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let body = ChatBody {
            model: &self.endpoint.model,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let text = self.endpoint.post(&self.agent, &body)?;
        let reply: ChatReply = serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))?;
        Ok(reply.text)
    }
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbedReply {
    embedding: Vec<f64>,
}

pub struct HttpEmbedder {
    endpoint: Endpoint,
    dimension: usize,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(endpoint: Endpoint, dimension: usize) -> Self {
        Self {
            endpoint,
            dimension,
            agent: agent(),
        }
    }
}

impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let body = EmbedBody {
            model: &self.endpoint.model,
            input: text,
        };
        let raw = self.endpoint.post(&self.agent, &body)?;
        let reply: EmbedReply = serde_json::from_str(&raw).map_err(|e| BackendError::Malformed(e.to_string()))?;
        if reply.embedding.len() != self.dimension {
            return Err(BackendError::Malformed(format!(
                "embedding has {} components, expected {}",
                reply.embedding.len(),
                self.dimension
            )));
        }
        Ok(reply.embedding)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Agent, Backends, RetryPolicy};
    use crate::memory::HashEmbedder;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    /// Serves the given `(status, body)` replies, one per connection, and
    /// returns the request bodies it received.
    fn serve(replies: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                seen.push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            seen
        });
        (url, handle)
    }

    fn endpoint(url: String) -> Endpoint {
        Endpoint {
            url,
            token: Some("secret".into()),
            model: "m".into(),
        }
    }

    #[test]
    fn chat_round_trip() {
        let (url, h) = serve(vec![(200, r#"{"text":"order: a"}"#.into())]);
        let model = HttpModel::new(endpoint(url));
        let req = CompletionRequest::new(Agent::Navigator, vec![ChatMessage::user("hi")], 0.3);
        assert_eq!(model.complete(&req).unwrap(), "order: a");
        let bodies = h.join().unwrap();
        let v: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(v["model"], "m");
        assert_eq!(v["messages"][0]["content"], "hi");
        assert_eq!(v["temperature"], 0.3);
        assert_eq!(v["max_tokens"], 1024);
    }

    #[test]
    fn server_errors_are_retried_and_counted() {
        let (url, h) = serve(vec![
            (503, "busy".into()),
            (500, "oops".into()),
            (200, r#"{"text":"CORRECT"}"#.into()),
        ]);
        let model: Arc<dyn LanguageModel> = Arc::new(HttpModel::new(endpoint(url)));
        let backends = Backends::new(model.clone(), model, Arc::new(HashEmbedder::default())).with_retry(RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(1),
        });
        let req = CompletionRequest::new(Agent::Critic, vec![ChatMessage::user("x")], 0.0);
        assert_eq!(backends.complete(&req).unwrap(), "CORRECT");
        assert_eq!(backends.calls().critic, 3);
        h.join().unwrap();
    }

    #[test]
    fn malformed_reply_and_missing_config() {
        let (url, h) = serve(vec![(200, "{}".into())]);
        let model = HttpModel::new(endpoint(url));
        let req = CompletionRequest::new(Agent::Learner, vec![ChatMessage::user("x")], 0.0);
        assert!(matches!(model.complete(&req), Err(BackendError::Malformed(_))));
        h.join().unwrap();
        assert!(matches!(
            Endpoint::from_env("NO_SUCH_ROLE_FOR_TEST"),
            Err(BackendError::NotConfigured(_))
        ));
    }

    #[test]
    fn embedder_checks_dimension() {
        let (url, h) = serve(vec![(200, r#"{"embedding":[0.1,0.2]}"#.into()), (200, r#"{"embedding":[1.0]}"#.into())]);
        let e = HttpEmbedder::new(endpoint(url), 2);
        assert_eq!(e.embed("a").unwrap(), vec![0.1, 0.2]);
        assert!(matches!(e.embed("b"), Err(BackendError::Malformed(_))));
        h.join().unwrap();
    }
}
