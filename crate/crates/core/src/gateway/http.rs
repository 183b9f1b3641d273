//! OpenAI-compatible `POST /v1/chat/completions` backend.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, BackendError, CompletionRequest, Purpose};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "REFLECTIVE_API_KEY";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpBackendConfig {
    /// Server root, e.g. `http://localhost:8000`. `/v1/chat/completions` is appended.
    pub base_url: String,
    /// Model used for optimizer calls (reflection, crossover, mutation, paraphrase).
    pub model: String,
    /// Model being optimized for; defaults to `model`.
    pub task_model: Option<String>,
    pub timeout_secs: u64,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000".into(),
            model: "gpt-4o-mini".into(),
            task_model: None,
            timeout_secs: 120,
        }
    }
}

pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    config: HttpBackendConfig,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let url = format!("{}/v1/chat/completions", config.base_url.trim_end_matches('/'));
        Self {
            agent,
            url,
            config,
            api_key,
        }
    }

    /// Reads the API key from [`API_KEY_ENV`].
    pub fn from_env(config: HttpBackendConfig) -> Self {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(config, key)
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn model_for(&self, purpose: Purpose) -> &str {
        match (purpose, &self.config.task_model) {
            (Purpose::TaskInference, Some(m)) => m,
            _ => &self.config.model,
        }
    }

    fn body(&self, request: &CompletionRequest) -> serde_json::Value {
        json!({
            "model": self.model_for(request.purpose),
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }
}

fn retryable_status(status: u16) -> bool {
    status == 429 || status == 408 || (500..600).contains(&status)
}

fn parse_content(body: &str) -> Result<String, BackendError> {
    let value: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| BackendError::permanent(format!("response is not JSON: {e}")))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| BackendError::permanent("response has no choices[0].message.content"))
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        "http"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let mut call = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call
            .send_json(self.body(request))
            .map_err(|e| BackendError::transient(format!("transport: {e}")))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::transient(format!("reading body: {e}")))?;
        if !(200..300).contains(&status) {
            let snippet: String = text.chars().take(200).collect();
            return Err(BackendError {
                transient: retryable_status(status),
                status: Some(status),
                message: format!("HTTP {status}: {snippet}"),
            });
        }
        parse_content(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatMessage, Gateway, RetryPolicy};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;
    use std::sync::Mutex;

    /// Serves one canned (status, body) per connection and records request bodies.
    fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let seen_thread = seen.clone();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut content_length = 0;
                let mut headers = String::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        content_length = v.trim().parse().unwrap();
                    }
                    headers.push_str(&line);
                }
                let mut buf = vec![0; content_length];
                reader.read_exact(&mut buf).unwrap();
                seen_thread
                    .lock()
                    .unwrap()
                    .push(format!("{headers}\n{}", String::from_utf8(buf).unwrap()));
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}"), seen)
    }

    fn ok_body(text: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
    }

    fn request() -> CompletionRequest {
        CompletionRequest {
            messages: vec![ChatMessage::system("be brief"), ChatMessage::user("hi")],
            temperature: 0.0,
            max_tokens: 16,
            purpose: Purpose::TaskInference,
        }
    }

    fn config(base_url: String) -> HttpBackendConfig {
        HttpBackendConfig {
            base_url,
            model: "opt-model".into(),
            task_model: Some("task-model".into()),
            timeout_secs: 5,
        }
    }

    #[test]
    fn retries_429_then_succeeds() {
        let (url, seen) = serve(vec![
            (429, "{}".into()),
            (429, "{}".into()),
            (200, ok_body("hello")),
        ]);
        let backend = HttpBackend::new(config(url), Some("secret".into()));
        let gw = Gateway::new(Arc::new(backend), 10).with_retry(RetryPolicy {
            base_delay: Duration::from_millis(5),
            ..RetryPolicy::default()
        });
        let resp = gw.complete(&request()).unwrap();
        assert_eq!(resp.text, "hello");
        assert_eq!(resp.attempts, 3);
        assert_eq!(resp.backend_id, "http");
        assert_eq!(gw.ledger().total(), 1);

        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 3);
        let last = &seen[2];
        assert!(last.starts_with("POST /v1/chat/completions"));
        assert!(last.to_ascii_lowercase().contains("authorization: bearer secret"));
        let body: serde_json::Value = serde_json::from_str(last.split("\n\n").last().unwrap().trim()).unwrap();
        assert_eq!(body["model"], "task-model");
        assert_eq!(body["max_tokens"], 16);
        assert_eq!(body["messages"][0]["role"], "system");
    }

    #[test]
    fn client_errors_are_permanent() {
        let (url, _) = serve(vec![(401, r#"{"error":"nope"}"#.into())]);
        let backend = HttpBackend::new(config(url), None);
        let err = backend.complete(&request()).unwrap_err();
        assert!(!err.transient);
        assert_eq!(err.status, Some(401));
    }

    #[test]
    fn server_errors_are_transient() {
        let (url, _) = serve(vec![(503, "busy".into())]);
        let err = HttpBackend::new(config(url), None).complete(&request()).unwrap_err();
        assert!(err.transient);
    }

    #[test]
    fn connection_refused_is_transient() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let err = HttpBackend::new(config(format!("http://{addr}")), None)
            .complete(&request())
            .unwrap_err();
        assert!(err.transient);
    }

    #[test]
    fn response_shape_is_checked() {
        assert_eq!(parse_content(&ok_body("x")).unwrap(), "x");
        assert!(parse_content(r#"{"choices": []}"#).is_err());
        assert!(parse_content("<html>").is_err());
    }

    #[test]
    fn url_is_joined() {
        let b = HttpBackend::new(config("http://h:1/".into()), None);
        assert_eq!(b.url(), "http://h:1/v1/chat/completions");
        assert_eq!(b.model_for(Purpose::Mutate), "opt-model");
        assert_eq!(b.model_for(Purpose::TaskInference), "task-model");
    }
}
