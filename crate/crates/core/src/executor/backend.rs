use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Message;
use crate::error::{Error, Result};
use crate::transport::{self, Limiter};

/// One completion as returned by a backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

pub trait Backend: Send + Sync {
    fn complete(&self, model: &str, messages: &[Message]) -> Result<Completion>;
}

/// Fixture key: hex SHA-256 of the compact JSON `{"model": .., "messages": [..]}`.
pub fn prompt_hash(model: &str, messages: &[Message]) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        model: &'a str,
        messages: &'a [Message],
    }
    let bytes = serde_json::to_vec(&Key { model, messages }).expect("messages serialize");
    hex::encode(Sha256::digest(bytes))
}

/// Rough token count used when a fixture does not pin one.
pub fn approx_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

#[derive(Debug, Clone, PartialEq)]
struct Rule {
    needle: String,
    response: String,
}

/// Deterministic fixture-driven backend. Lookup order: exact prompt hash,
/// then the first substring rule matching the final message, then the
/// default response.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScriptedBackend {
    fixtures: BTreeMap<String, Completion>,
    rules: Vec<Rule>,
    default: Option<String>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_fixture_json(text: &str) -> Result<Self> {
        Ok(Self {
            fixtures: serde_json::from_str(text)?,
            ..Self::default()
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_fixture_json(&text)
    }

    pub fn with_fixture(mut self, hash: impl Into<String>, completion: Completion) -> Self {
        self.fixtures.insert(hash.into(), completion);
        self
    }

    pub fn with_rule(mut self, needle: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push(Rule {
            needle: needle.into(),
            response: response.into(),
        });
        self
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default = Some(response.into());
        self
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, model: &str, messages: &[Message]) -> Result<Completion> {
        if let Some(c) = self.fixtures.get(&prompt_hash(model, messages)) {
            return Ok(c.clone());
        }
        let last = messages.last().map(|m| m.content.as_str()).unwrap_or("");
        let text = self
            .rules
            .iter()
            .find(|r| last.contains(&r.needle))
            .map(|r| r.response.clone())
            .or_else(|| self.default.clone())
            .ok_or_else(|| Error::Backend {
                model: model.to_string(),
                message: "no scripted response for prompt".into(),
            })?;
        let prompt_tokens = messages.iter().map(|m| approx_tokens(&m.content)).sum();
        Ok(Completion {
            completion_tokens: approx_tokens(&text),
            prompt_tokens,
            text,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub url: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Remote model id; defaults to the pool card name.
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_in_flight() -> usize {
    4
}

fn default_timeout() -> u64 {
    60
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// Chat-completions client.
pub struct HttpChatBackend {
    config: HttpBackendConfig,
    agent: ureq::Agent,
    limiter: Limiter,
}

impl HttpChatBackend {
    pub fn new(config: HttpBackendConfig) -> Self {
        let agent = transport::agent(Duration::from_secs(config.timeout_secs));
        let limiter = Limiter::new(config.max_in_flight);
        Self {
            config,
            agent,
            limiter,
        }
    }
}

impl Backend for HttpChatBackend {
    fn complete(&self, model: &str, messages: &[Message]) -> Result<Completion> {
        let _permit = self.limiter.acquire();
        let key = self
            .config
            .api_key_env
            .as_deref()
            .and_then(|name| std::env::var(name).ok());
        let body = ChatRequest {
            model: self.config.model.as_deref().unwrap_or(model),
            messages,
        };
        let fail = |message: String| Error::Backend {
            model: model.to_string(),
            message,
        };
        let resp: ChatResponse = transport::post_json(&self.agent, &self.config.url, key.as_deref(), &body)
            .map_err(|f| fail(f.message))?;
        let text = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| fail("response has no message content".into()))?;
        let (prompt_tokens, completion_tokens) = match resp.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens),
            None => (
                messages.iter().map(|m| approx_tokens(&m.content)).sum(),
                approx_tokens(&text),
            ),
        };
        Ok(Completion {
            text,
            prompt_tokens,
            completion_tokens,
        })
    }
}

/// Model name → backend, with an optional catch-all.
#[derive(Clone, Default)]
pub struct BackendSet {
    by_model: BTreeMap<String, Arc<dyn Backend>>,
    fallback: Option<Arc<dyn Backend>>,
}

impl BackendSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every model served by one backend.
    pub fn uniform(backend: Arc<dyn Backend>) -> Self {
        Self {
            by_model: BTreeMap::new(),
            fallback: Some(backend),
        }
    }

    pub fn with_fallback(mut self, backend: Arc<dyn Backend>) -> Self {
        self.fallback = Some(backend);
        self
    }

    pub fn insert(&mut self, model: impl Into<String>, backend: Arc<dyn Backend>) {
        self.by_model.insert(model.into(), backend);
    }

    pub fn get(&self, model: &str) -> Option<&Arc<dyn Backend>> {
        self.by_model.get(model).or(self.fallback.as_ref())
    }
}
