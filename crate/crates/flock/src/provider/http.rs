//! Client for OpenAI-compatible `/chat/completions` and `/embeddings`
//! endpoints.

use std::collections::BTreeMap;

use serde::Deserialize;
use serde_json::{json, Value as Json};
use ureq::Agent;

use super::{
    classify_status, ChatRequest, ChatResponse, ErrorKind, Provider, ProviderConfig, ProviderError,
};

pub struct HttpProvider {
    config: ProviderConfig,
    agent: Agent,
    /// Context windows per model id, for the local overflow pre-check.
    windows: BTreeMap<String, u32>,
}

#[derive(Deserialize)]
struct ChatBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct EmbedBody {
    data: Vec<EmbedItem>,
}

#[derive(Deserialize)]
struct EmbedItem {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

fn transport_error(e: ureq::Error) -> ProviderError {
    let kind = match &e {
        ureq::Error::Timeout(_)
        | ureq::Error::Io(_)
        | ureq::Error::HostNotFound
        | ureq::Error::ConnectionFailed
        | ureq::Error::Protocol(_) => ErrorKind::Transient,
        _ => ErrorKind::Fatal,
    };
    ProviderError::new(kind, e.to_string())
}

impl HttpProvider {
    pub fn new(config: ProviderConfig, windows: BTreeMap<String, u32>) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(config.timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        HttpProvider {
            config,
            agent,
            windows,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn api_key(&self) -> Result<Option<String>, ProviderError> {
        let Some(var) = &self.config.api_key_env else {
            return Ok(None);
        };
        match std::env::var(var) {
            Ok(k) if !k.is_empty() => Ok(Some(k)),
            _ => Err(ProviderError::new(
                ErrorKind::Fatal,
                format!("API key variable {var} is not set"),
            )),
        }
    }

    fn post(&self, path: &str, body: &Json) -> Result<String, ProviderError> {
        let key = self.api_key()?;
        let mut req = self
            .agent
            .post(self.url(path))
            .header("Content-Type", "application/json");
        if let Some(k) = key {
            req = req.header("Authorization", format!("Bearer {k}"));
        }
        let mut resp = req.send(body.to_string()).map_err(transport_error)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport_error)?;
        if (200..300).contains(&status) {
            Ok(text)
        } else {
            Err(ProviderError::new(
                classify_status(status, &text),
                format!(
                    "HTTP {status}: {}",
                    text.chars().take(300).collect::<String>()
                ),
            ))
        }
    }
}

pub(crate) fn chat_body(req: &ChatRequest) -> Json {
    let mut body = json!({
        "model": req.model_id,
        "messages": [
            {"role": "system", "content": req.system_text},
            {"role": "user", "content": req.user_text},
        ],
    });
    if let Some(t) = req.params.temperature {
        body["temperature"] = json!(t);
    }
    if let Some(p) = req.params.top_p {
        body["top_p"] = json!(p);
    }
    if req.json_mode {
        body["response_format"] = json!({"type": "json_object"});
    }
    body
}

impl Provider for HttpProvider {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        if let Some(window) = self.windows.get(&req.model_id) {
            let est = req.estimated_tokens();
            if est > *window as usize {
                return Err(ProviderError::new(
                    ErrorKind::ContextOverflow,
                    format!("estimated {est} tokens exceed the context window of {window}"),
                ));
            }
        }
        let text = self.post("chat/completions", &chat_body(req))?;
        let body: ChatBody = serde_json::from_str(&text)
            .map_err(|e| ProviderError::new(ErrorKind::Fatal, format!("bad chat response: {e}")))?;
        let content = body
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::new(ErrorKind::Fatal, "chat response has no content"))?;
        let usage = body.usage.unwrap_or_default();
        Ok(ChatResponse {
            text: content,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        })
    }

    fn embed(&self, model_id: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let text = self.post("embeddings", &json!({"model": model_id, "input": texts}))?;
        let body: EmbedBody = serde_json::from_str(&text).map_err(|e| {
            ProviderError::new(ErrorKind::Fatal, format!("bad embedding response: {e}"))
        })?;
        if body.data.len() != texts.len() {
            return Err(ProviderError::new(
                ErrorKind::Fatal,
                format!(
                    "expected {} embeddings, got {}",
                    texts.len(),
                    body.data.len()
                ),
            ));
        }
        let mut items: Vec<(usize, Vec<f64>)> = body
            .data
            .into_iter()
            .enumerate()
            .map(|(i, d)| (d.index.unwrap_or(i), d.embedding))
            .collect();
        items.sort_by_key(|(i, _)| *i);
        Ok(items.into_iter().map(|(_, v)| v).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use flock_core::catalog::ModelParams;

    #[test]
    fn json_mode_sets_response_format() {
        let mut req = ChatRequest {
            model_id: "m".into(),
            system_text: "s".into(),
            user_text: "u".into(),
            params: ModelParams {
                temperature: Some(0.0),
                top_p: None,
            },
            json_mode: true,
            tuple_count: 1,
        };
        let b = chat_body(&req);
        assert_eq!(b["response_format"]["type"], "json_object");
        assert_eq!(b["messages"][0]["role"], "system");
        assert_eq!(b["temperature"], 0.0);
        assert!(b.get("top_p").is_none());
        req.json_mode = false;
        assert!(chat_body(&req).get("response_format").is_none());
    }
}
