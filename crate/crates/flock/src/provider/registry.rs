//! Provider registry: endpoints and per-model limits, loaded from
//! `providers.json`.

use std::path::Path;
use std::time::Duration;

use flock_core::catalog::{ModelParams, ModelResource, Scope};
use serde::{Deserialize, Serialize};

use super::DEFAULT_TIMEOUT;

/// Registry compiled into the binary, used when no file is given.
pub const BUILTIN_REGISTRY: &str = include_str!("../../providers.json");

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("unknown provider '{0}'")]
    UnknownProvider(String),
    #[error("cannot read registry {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid registry: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    /// OpenAI-compatible HTTP endpoint.
    #[default]
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub provider_id: String,
    #[serde(default)]
    pub kind: ProviderKind,
    #[serde(default)]
    pub base_url: String,
    /// Environment variable holding the API key. Local endpoints need none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_retries() -> u32 {
    3
}

impl ProviderConfig {
    pub fn timeout(&self) -> Duration {
        self.timeout_ms
            .map_or(DEFAULT_TIMEOUT, Duration::from_millis)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model_id: String,
    pub provider_id: String,
    pub context_window_tokens: u32,
    pub max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dimension: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    pub providers: Vec<ProviderConfig>,
    pub models: Vec<ModelInfo>,
}

impl Registry {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_REGISTRY).expect("built-in registry is valid")
    }

    pub fn parse(text: &str) -> Result<Self, RegistryError> {
        let r: Registry =
            serde_json::from_str(text).map_err(|e| RegistryError::Invalid(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<(), RegistryError> {
        for p in &self.providers {
            if p.timeout_ms == Some(0) {
                return Err(RegistryError::Invalid(format!(
                    "provider '{}' has a zero timeout",
                    p.provider_id
                )));
            }
        }
        for m in &self.models {
            self.provider(&m.provider_id)?;
            if m.max_output_tokens == 0 || m.context_window_tokens <= m.max_output_tokens {
                return Err(RegistryError::Invalid(format!(
                    "model '{}' needs 0 < max_output_tokens < context_window_tokens",
                    m.model_id
                )));
            }
            if m.embedding_dimension == Some(0) {
                return Err(RegistryError::Invalid(format!(
                    "model '{}' has a zero embedding dimension",
                    m.model_id
                )));
            }
        }
        Ok(())
    }

    pub fn provider(&self, provider_id: &str) -> Result<&ProviderConfig, RegistryError> {
        self.providers
            .iter()
            .find(|p| p.provider_id == provider_id)
            .ok_or_else(|| RegistryError::UnknownProvider(provider_id.to_string()))
    }

    /// Window, output limit and embedding dimension of a model.
    pub fn model_metadata(&self, model_id: &str) -> Result<&ModelInfo, RegistryError> {
        self.models
            .iter()
            .find(|m| m.model_id == model_id)
            .ok_or_else(|| RegistryError::UnknownModel(model_id.to_string()))
    }

    /// Resource for an inline `{'model': 'id'}` argument.
    pub fn inline_model(&self, model_id: &str) -> Option<ModelResource> {
        let m = self.model_metadata(model_id).ok()?;
        Some(ModelResource {
            name: m.model_id.clone(),
            provider_id: m.provider_id.clone(),
            model_id: m.model_id.clone(),
            context_window_tokens: m.context_window_tokens,
            max_output_tokens: m.max_output_tokens,
            embedding_dimension: m.embedding_dimension,
            params: ModelParams::default(),
            version: 0,
            scope: Scope::Local,
            created_at: String::new(),
        })
    }
}
