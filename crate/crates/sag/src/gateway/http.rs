//! Blocking HTTP client for an OpenAI-style chat-completion endpoint, with
//! bounded retries and exponential backoff on transient failures.

use serde::Deserialize;

use super::{ChatClient, ChatRequest, GatewayError};

/// Endpoint configuration; the URL and key come from the named environment
/// variables so credentials stay out of config files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpConfig {
    pub url_env: String,
    pub key_env: String,
    /// Total attempts per request (transient failures only).
    pub max_attempts: usize,
    pub backoff_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            url_env: "SAG_LLM_URL".into(),
            key_env: "SAG_LLM_KEY".into(),
            max_attempts: 3,
            backoff_ms: 250,
        }
    }
}

pub struct HttpChatClient {
    url: String,
    key: Option<String>,
    agent: reqwest::blocking::Client,
    config: HttpConfig,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

impl HttpChatClient {
    pub fn from_env(config: HttpConfig) -> Result<Self, GatewayError> {
        let url = std::env::var(&config.url_env)
            .map_err(|_| GatewayError::MissingEnv(config.url_env.clone()))?;
        let key = std::env::var(&config.key_env).ok();
        Ok(Self::with_url(url, key, config))
    }

    pub fn with_url(url: String, key: Option<String>, config: HttpConfig) -> Self {
        let agent = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(120))
            .build()
            .expect("reqwest client");
        HttpChatClient { url, key, agent, config }
    }

    fn attempt(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let mut builder = self.agent.post(&self.url).json(request);
        if let Some(key) = &self.key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = response.status();
        let body = response.text().map_err(|e| GatewayError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(GatewayError::Http { status: status.as_u16(), body });
        }
        let parsed: ChatResponse = serde_json::from_str(&body)
            .map_err(|e| GatewayError::Transport(format!("malformed response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or(GatewayError::EmptyResponse)
    }
}

/// Transport errors and 5xx are retryable; 4xx is terminal.
fn is_transient(err: &GatewayError) -> bool {
    match err {
        GatewayError::Transport(_) => true,
        GatewayError::Http { status, .. } => *status >= 500,
        _ => false,
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        request.validate()?;
        let mut delay = std::time::Duration::from_millis(self.config.backoff_ms);
        let attempts = self.config.max_attempts.max(1);
        let mut last = None;
        for attempt in 0..attempts {
            match self.attempt(request) {
                Ok(response) => return Ok(response),
                Err(err) if is_transient(&err) && attempt + 1 < attempts => {
                    std::thread::sleep(delay);
                    delay *= 2;
                    last = Some(err);
                }
                Err(err) => return Err(err),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Message, Role};
    use std::io::{Read, Write};
    use std::net::TcpListener;

    /// Minimal one-shot HTTP server: answers each connection with the next
    /// scripted (status, body) pair.
    fn serve(script: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<usize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut served = 0;
            for (status, body) in script {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = [0u8; 65536];
                // read headers + body enough to satisfy the client
                let mut total = 0;
                loop {
                    let n = stream.read(&mut buf[total..]).unwrap();
                    total += n;
                    let text = String::from_utf8_lossy(&buf[..total]);
                    if let Some(pos) = text.find("\r\n\r\n") {
                        let content_len = text
                            .lines()
                            .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                            .unwrap_or(0);
                        if total >= pos + 4 + content_len {
                            break;
                        }
                    }
                    if n == 0 {
                        break;
                    }
                }
                let reason = if status == 200 { "OK" } else { "ERR" };
                let response = format!(
                    "HTTP/1.1 {status} {reason}\r\ncontent-length: {}\r\ncontent-type: application/json\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(response.as_bytes()).unwrap();
                served += 1;
            }
            served
        });
        (format!("http://{addr}/v1/chat/completions"), handle)
    }

    fn request() -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![Message { role: Role::User, content: "hi".into() }],
            temperature: 0.0,
            max_tokens: 4,
        }
    }

    fn ok_body(content: &str) -> String {
        serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
            .to_string()
    }

    #[test]
    fn parses_first_choice_content() {
        let (url, handle) = serve(vec![(200, ok_body("hello back"))]);
        let client = HttpChatClient::with_url(url, None, HttpConfig::default());
        assert_eq!(client.complete(&request()).unwrap(), "hello back");
        assert_eq!(handle.join().unwrap(), 1);
    }

    #[test]
    fn retries_5xx_then_succeeds() {
        let (url, handle) = serve(vec![
            (500, "oops".into()),
            (503, "busy".into()),
            (200, ok_body("third time")),
        ]);
        let client = HttpChatClient::with_url(
            url,
            Some("key".into()),
            HttpConfig { backoff_ms: 1, ..HttpConfig::default() },
        );
        assert_eq!(client.complete(&request()).unwrap(), "third time");
        assert_eq!(handle.join().unwrap(), 3);
    }

    #[test]
    fn client_errors_are_terminal() {
        let (url, handle) = serve(vec![(400, "bad request".into())]);
        let client = HttpChatClient::with_url(
            url,
            None,
            HttpConfig { backoff_ms: 1, ..HttpConfig::default() },
        );
        match client.complete(&request()) {
            Err(GatewayError::Http { status: 400, .. }) => {}
            other => panic!("expected terminal 400, got {other:?}"),
        }
        assert_eq!(handle.join().unwrap(), 1);
    }

    #[test]
    fn exhausted_retries_return_last_error() {
        let (url, handle) = serve(vec![(500, "a".into()), (500, "b".into()), (500, "c".into())]);
        let client = HttpChatClient::with_url(
            url,
            None,
            HttpConfig { backoff_ms: 1, max_attempts: 3, ..HttpConfig::default() },
        );
        match client.complete(&request()) {
            Err(GatewayError::Http { status: 500, body }) => assert_eq!(body, "c"),
            other => panic!("expected exhausted 500, got {other:?}"),
        }
        assert_eq!(handle.join().unwrap(), 3);
    }

    #[test]
    fn missing_env_is_reported() {
        let config = HttpConfig {
            url_env: "SAG_TEST_DOES_NOT_EXIST".into(),
            ..HttpConfig::default()
        };
        assert!(matches!(
            HttpChatClient::from_env(config),
            Err(GatewayError::MissingEnv(v)) if v == "SAG_TEST_DOES_NOT_EXIST"
        ));
    }
}
