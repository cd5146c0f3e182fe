use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{truncate_after_stop, GenError, GenRequest, Generator};
use crate::http::{JsonClient, RetryPolicy};

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
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
    #[serde(default)]
    content: Option<String>,
}

/// Chat-completion client (`model`, `messages`, `temperature`, `max_tokens`).
/// The prompt is sent as a single user message.
#[derive(Debug, Clone)]
pub struct ChatClient {
    client: JsonClient,
    model: String,
}

impl ChatClient {
    pub fn new(url: &str, model: &str, bearer: Option<String>, timeout: Duration, retry: RetryPolicy) -> Self {
        Self {
            client: JsonClient::new(url, bearer, timeout, retry),
            model: model.to_string(),
        }
    }
}

impl Generator for ChatClient {
    fn generate(&self, request: &GenRequest<'_>) -> Result<String, GenError> {
        let body = ChatRequest {
            model: &self.model,
            messages: vec![ChatMessage {
                role: "user",
                content: request.prompt,
            }],
            temperature: request.params.temperature,
            max_tokens: request.params.max_tokens,
        };
        let resp: ChatResponse = self.client.post(&body)?;
        let content = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GenError::Decode("response has no message content".to_string()))?;
        Ok(truncate_after_stop(&content, &request.params.stop))
    }
}
