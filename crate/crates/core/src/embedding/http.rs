use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Embedder, EmbeddingVector};
use crate::error::{Error, Result};
use crate::transport::{self, Limiter};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpEmbedderConfig {
    pub url: String,
    /// Name of the environment variable holding the bearer token, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    pub dim: usize,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_in_flight() -> usize {
    4
}

fn default_timeout() -> u64 {
    30
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a [&'a str],
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

/// Embedding service speaking `{"input": [...]}` → `{"data": [{"embedding": [...]}]}`.
/// Returned vectors are re-normalized locally.
pub struct HttpEmbedder {
    config: HttpEmbedderConfig,
    agent: ureq::Agent,
    limiter: Limiter,
}

impl HttpEmbedder {
    pub fn new(config: HttpEmbedderConfig) -> Result<Self> {
        if config.dim == 0 {
            return Err(Error::config("embedding.dim", "must be positive"));
        }
        let agent = transport::agent(Duration::from_secs(config.timeout_secs));
        let limiter = Limiter::new(config.max_in_flight);
        Ok(Self {
            config,
            agent,
            limiter,
        })
    }

    fn api_key(&self) -> Option<String> {
        self.config
            .api_key_env
            .as_deref()
            .and_then(|name| std::env::var(name).ok())
    }
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let _permit = self.limiter.acquire();
        let key = self.api_key();
        let body = EmbedRequest {
            input: texts,
            model: self.config.model.as_deref(),
        };
        let resp: EmbedResponse =
            transport::post_json(&self.agent, &self.config.url, key.as_deref(), &body).map_err(
                |f| Error::Provider {
                    retryable: f.retryable(),
                    retry_after_secs: f.retry_after_secs,
                    message: f.message,
                },
            )?;
        if resp.data.len() != texts.len() {
            return Err(Error::Provider {
                message: format!(
                    "asked for {} embeddings, got {}",
                    texts.len(),
                    resp.data.len()
                ),
                retryable: false,
                retry_after_secs: None,
            });
        }
        resp.data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.config.dim {
                    return Err(Error::Provider {
                        message: format!(
                            "provider returned dim {}, configured {}",
                            d.embedding.len(),
                            self.config.dim
                        ),
                        retryable: false,
                        retry_after_secs: None,
                    });
                }
                EmbeddingVector::normalized(d.embedding)
            })
            .collect()
    }
}
