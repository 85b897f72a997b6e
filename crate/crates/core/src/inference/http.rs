use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, CompletionJob, EndpointConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Request body of the chat-completions protocol.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    /// The whole prompt goes out as one user message, after the optional system message.
    pub fn new(cfg: &EndpointConfig, prompt: &str) -> Self {
        let mut messages = Vec::with_capacity(2);
        if let Some(system) = &cfg.system_message {
            messages.push(ChatMessage {
                role: "system".into(),
                content: system.clone(),
            });
        }
        messages.push(ChatMessage {
            role: "user".into(),
            content: prompt.to_string(),
        });
        Self {
            model: cfg.model_name.clone(),
            messages,
            temperature: cfg.temperature,
            max_tokens: cfg.max_output_tokens,
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

/// Extracts the first choice's message content.
pub fn extract_reply(body: &str) -> Result<String, BackendError> {
    let parsed: ChatResponse =
        serde_json::from_str(body).map_err(|e| BackendError::Malformed(format!("response body: {e}")))?;
    parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| BackendError::Malformed("response has no choices[0].message.content".into()))
}

/// Talks to a chat-completions endpoint over HTTP(S).
pub struct HttpBackend {
    client: reqwest::Client,
    url: String,
    token: Result<Option<String>, String>,
}

impl HttpBackend {
    pub fn new(cfg: &EndpointConfig) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.request_timeout_secs))
            .build()
            .map_err(|e| BackendError::Fatal(format!("http client: {e}")))?;
        let token = match &cfg.auth_env_var {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(value) if !value.is_empty() => Ok(Some(value)),
                _ => Err(format!("environment variable {var} is not set")),
            },
        };
        Ok(Self {
            client,
            url: cfg.completions_url(),
            token,
        })
    }
}

#[async_trait]
impl ChatBackend for HttpBackend {
    async fn send(&self, _job: &CompletionJob, request: &ChatRequest) -> Result<String, BackendError> {
        let token = self.token.as_ref().map_err(|e| BackendError::Auth(e.clone()))?;
        let mut builder = self.client.post(&self.url).json(request);
        if let Some(token) = token {
            builder = builder.bearer_auth(token);
        }
        let response = builder.send().await.map_err(|e| BackendError::Retryable {
            status: None,
            message: e.to_string(),
        })?;
        let status = response.status().as_u16();
        let body = response.text().await.map_err(|e| BackendError::Retryable {
            status: Some(status),
            message: e.to_string(),
        })?;
        match status {
            200..=299 => extract_reply(&body),
            401 | 403 => Err(BackendError::Auth(format!("HTTP {status}: {body}"))),
            408 | 429 | 500..=599 => Err(BackendError::Retryable {
                status: Some(status),
                message: body,
            }),
            _ => Err(BackendError::Fatal(format!("HTTP {status}: {body}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_body_shape() {
        let cfg = EndpointConfig::new("http://localhost:1", "glm");
        let body = serde_json::to_value(ChatRequest::new(&cfg, "hello")).unwrap();
        assert_eq!(
            body,
            serde_json::json!({
                "model": "glm",
                "messages": [{"role": "user", "content": "hello"}],
                "temperature": 0.0,
                "max_tokens": 128
            })
        );
        let with_system = EndpointConfig {
            system_message: Some("be brief".into()),
            ..cfg
        };
        assert_eq!(ChatRequest::new(&with_system, "x").messages[0].role, "system");
    }

    #[test]
    fn reply_extraction() {
        assert_eq!(
            extract_reply(r#"{"choices":[{"message":{"role":"assistant","content":"joy"}}]}"#).unwrap(),
            "joy"
        );
        assert!(matches!(extract_reply(r#"{"choices":[]}"#), Err(BackendError::Malformed(_))));
        assert!(matches!(extract_reply("<html>"), Err(BackendError::Malformed(_))));
    }
}
