//! HTTP backends speaking the common chat-completion / embeddings JSON shape.
//!
//! Credentials come from `SOMONITOR_LLM_API_KEY` and the endpoint from
//! `SOMONITOR_LLM_BASE_URL`; neither is ever written to disk.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{BackendError, CompletionBackend, CompletionRequest, EmbeddingBackend};

pub const API_KEY_ENV: &str = "SOMONITOR_LLM_API_KEY";
pub const BASE_URL_ENV: &str = "SOMONITOR_LLM_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Clone)]
pub struct RemoteConfig {
    pub base_url: String,
    pub api_key: String,
    pub model: String,
    pub timeout: Duration,
}

impl std::fmt::Debug for RemoteConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteConfig")
            .field("base_url", &self.base_url)
            .field("model", &self.model)
            .finish_non_exhaustive()
    }
}

impl RemoteConfig {
    pub fn from_env(model: impl Into<String>) -> Result<Self, BackendError> {
        let api_key = std::env::var(API_KEY_ENV).map_err(|_| BackendError::Auth(format!("{API_KEY_ENV} is not set")))?;
        let base_url = std::env::var(BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        Ok(Self { base_url, api_key, model: model.into(), timeout: Duration::from_secs(120) })
    }
}

fn classify_status(status: StatusCode, body: &str) -> BackendError {
    let detail = format!("HTTP {status}: {}", body.chars().take(300).collect::<String>());
    match status.as_u16() {
        401 | 403 => BackendError::Auth(detail),
        408 | 409 | 425 | 429 | 500..=599 => BackendError::Transient(detail),
        _ => BackendError::Unavailable(detail),
    }
}

fn post_json<T: for<'de> Deserialize<'de>>(
    client: &Client,
    config: &RemoteConfig,
    path: &str,
    body: &serde_json::Value,
) -> Result<T, BackendError> {
    let url = format!("{}/{}", config.base_url.trim_end_matches('/'), path);
    let response = client
        .post(url)
        .bearer_auth(&config.api_key)
        .json(body)
        .send()
        .map_err(|e| BackendError::Transient(e.to_string()))?;
    let status = response.status();
    let text = response.text().map_err(|e| BackendError::Transient(e.to_string()))?;
    if !status.is_success() {
        return Err(classify_status(status, &text));
    }
    serde_json::from_str(&text).map_err(|e| BackendError::Unavailable(format!("malformed response: {e}")))
}

pub struct ChatBackend {
    client: Client,
    config: RemoteConfig,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Serialize, Deserialize)]
struct ChatMessage {
    #[serde(default)]
    role: String,
    #[serde(default)]
    content: Option<String>,
}

impl ChatBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        Ok(Self { client, config })
    }
}

impl CompletionBackend for ChatBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let mut body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        let response: ChatResponse = post_json(&self.client, &self.config, "chat/completions", &body)?;
        response
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Unavailable("response has no message content".into()))
    }
}

pub struct RemoteEmbedder {
    client: Client,
    config: RemoteConfig,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        Ok(Self { client, config })
    }
}

impl EmbeddingBackend for RemoteEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let body = json!({ "model": self.config.model, "input": texts });
        let mut response: EmbeddingResponse = post_json(&self.client, &self.config, "embeddings", &body)?;
        response.data.sort_by_key(|d| d.index.unwrap_or(usize::MAX));
        Ok(response.data.into_iter().map(|d| d.embedding).collect())
    }
}

#[cfg(test)]
mod tests {
    use std::io::{Read, Write};
    use std::net::TcpListener;

    use super::*;

    /// Serves one canned HTTP response per expected connection and returns the
    /// raw requests it received.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                loop {
                    let n = stream.read(&mut chunk).unwrap();
                    buf.extend_from_slice(&chunk[..n]);
                    let text = String::from_utf8_lossy(&buf);
                    if let Some(head_end) = text.find("\r\n\r\n") {
                        let len = text[..head_end]
                            .lines()
                            .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                            .unwrap_or(0);
                        if buf.len() >= head_end + 4 + len {
                            break;
                        }
                    }
                    if n == 0 {
                        break;
                    }
                }
                seen.push(String::from_utf8_lossy(&buf).into_owned());
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
            seen
        });
        (format!("http://{addr}"), handle)
    }

    fn config(base_url: String) -> RemoteConfig {
        RemoteConfig { base_url, api_key: "secret".into(), model: "m".into(), timeout: Duration::from_secs(5) }
    }

    #[test]
    fn chat_wire_shape() {
        let (url, server) = serve(vec![(200, r#"{"choices":[{"message":{"role":"assistant","content":"A, B"}}]}"#.into())]);
        let backend = ChatBackend::new(config(url)).unwrap();
        let request = CompletionRequest::new("remote", "sys", "rank these").with_seed(7);
        assert_eq!(backend.complete(&request).unwrap(), "A, B");
        let raw = server.join().unwrap().remove(0);
        assert!(raw.starts_with("POST /chat/completions"));
        assert!(raw.to_ascii_lowercase().contains("authorization: bearer secret"));
        let body: serde_json::Value = serde_json::from_str(raw.split("\r\n\r\n").nth(1).unwrap()).unwrap();
        assert_eq!(body["temperature"], 0.1);
        assert_eq!(body["seed"], 7);
        assert_eq!(body["messages"][1]["content"], "rank these");
    }

    #[test]
    fn status_classification() {
        let (url, server) = serve(vec![(401, "{}".into()), (503, "{}".into()), (400, "{}".into())]);
        let backend = ChatBackend::new(config(url)).unwrap();
        let request = CompletionRequest::new("remote", "sys", "u");
        assert!(matches!(backend.complete(&request), Err(BackendError::Auth(_))));
        assert!(matches!(backend.complete(&request), Err(BackendError::Transient(_))));
        assert!(matches!(backend.complete(&request), Err(BackendError::Unavailable(_))));
        server.join().unwrap();
    }

    #[test]
    fn embeddings_are_reordered_by_index() {
        let body = r#"{"data":[{"index":1,"embedding":[0.0,1.0]},{"index":0,"embedding":[1.0,0.0]}]}"#;
        let (url, server) = serve(vec![(200, body.into())]);
        let backend = RemoteEmbedder::new(config(url)).unwrap();
        let rows = backend.embed(&["a".into(), "b".into()]).unwrap();
        assert_eq!(rows, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        server.join().unwrap();
    }

    #[test]
    fn api_key_is_not_in_debug_output() {
        let c = config("http://x".into());
        assert!(!format!("{c:?}").contains("secret"));
    }
}
