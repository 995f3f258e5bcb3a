//! MODEL and PROMPT resources: versioning, scoping and resolution.
//!
//! The catalog keeps two record lists, one per [`Scope`]. Persistence is the
//! caller's job; [`Catalog::records`] and [`Catalog::from_records`] expose the
//! exact state to store.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ResourceKind {
    Model,
    Prompt,
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResourceKind::Model => "MODEL",
            ResourceKind::Prompt => "PROMPT",
        })
    }
}

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "UPPERCASE")]
pub enum Scope {
    Global,
    #[default]
    Local,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Global => "GLOBAL",
            Scope::Local => "LOCAL",
        })
    }
}

/// Generation parameters forwarded to the provider.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResource {
    pub name: String,
    pub provider_id: String,
    pub model_id: String,
    pub context_window_tokens: u32,
    pub max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dimension: Option<u32>,
    #[serde(default)]
    pub params: ModelParams,
    pub version: u32,
    pub scope: Scope,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptResource {
    pub name: String,
    pub text: String,
    pub version: u32,
    pub scope: Scope,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "UPPERCASE")]
pub enum ResourceRecord {
    Model(ModelResource),
    Prompt(PromptResource),
}

impl ResourceRecord {
    pub fn kind(&self) -> ResourceKind {
        match self {
            ResourceRecord::Model(_) => ResourceKind::Model,
            ResourceRecord::Prompt(_) => ResourceKind::Prompt,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            ResourceRecord::Model(m) => &m.name,
            ResourceRecord::Prompt(p) => &p.name,
        }
    }

    pub fn version(&self) -> u32 {
        match self {
            ResourceRecord::Model(m) => m.version,
            ResourceRecord::Prompt(p) => p.version,
        }
    }

    pub fn scope(&self) -> Scope {
        match self {
            ResourceRecord::Model(m) => m.scope,
            ResourceRecord::Prompt(p) => p.scope,
        }
    }

    pub fn as_model(&self) -> Option<&ModelResource> {
        match self {
            ResourceRecord::Model(m) => Some(m),
            ResourceRecord::Prompt(_) => None,
        }
    }

    pub fn as_prompt(&self) -> Option<&PromptResource> {
        match self {
            ResourceRecord::Prompt(p) => Some(p),
            ResourceRecord::Model(_) => None,
        }
    }
}

/// Version-free fields of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDefinition {
    pub name: String,
    pub provider_id: String,
    pub model_id: String,
    pub context_window_tokens: u32,
    pub max_output_tokens: u32,
    pub embedding_dimension: Option<u32>,
    pub params: ModelParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptDefinition {
    pub name: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResourceDefinition {
    Model(ModelDefinition),
    Prompt(PromptDefinition),
}

impl ResourceDefinition {
    pub fn kind(&self) -> ResourceKind {
        match self {
            ResourceDefinition::Model(_) => ResourceKind::Model,
            ResourceDefinition::Prompt(_) => ResourceKind::Prompt,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            ResourceDefinition::Model(m) => &m.name,
            ResourceDefinition::Prompt(p) => &p.name,
        }
    }

    fn into_record(self, version: u32, scope: Scope, created_at: String) -> ResourceRecord {
        match self {
            ResourceDefinition::Model(m) => ResourceRecord::Model(ModelResource {
                name: m.name,
                provider_id: m.provider_id,
                model_id: m.model_id,
                context_window_tokens: m.context_window_tokens,
                max_output_tokens: m.max_output_tokens,
                embedding_dimension: m.embedding_dimension,
                params: m.params,
                version,
                scope,
                created_at,
            }),
            ResourceDefinition::Prompt(p) => ResourceRecord::Prompt(PromptResource {
                name: p.name,
                text: p.text,
                version,
                scope,
                created_at,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CatalogError {
    #[error("{kind} '{name}' already exists in {scope} scope")]
    DuplicateResource {
        kind: ResourceKind,
        name: String,
        scope: Scope,
    },
    #[error("invalid definition: {0}")]
    InvalidDefinition(String),
    #[error("{kind} '{name}' not found")]
    NotFound { kind: ResourceKind, name: String },
    #[error("{kind} '{name}' has no version {version}")]
    VersionNotFound {
        kind: ResourceKind,
        name: String,
        version: u32,
    },
}

/// Resource names: non-empty, ASCII alphanumerics plus `-`, `_` and `.`.
pub fn is_valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn validate(def: &ResourceDefinition) -> Result<(), CatalogError> {
    if !is_valid_name(def.name()) {
        return Err(CatalogError::InvalidDefinition(alloc::format!(
            "'{}' is not a valid resource name",
            def.name()
        )));
    }
    match def {
        ResourceDefinition::Prompt(p) if p.text.trim().is_empty() => Err(
            CatalogError::InvalidDefinition("prompt text must not be empty".to_string()),
        ),
        ResourceDefinition::Model(m) => {
            if m.model_id.is_empty() || m.provider_id.is_empty() {
                return Err(CatalogError::InvalidDefinition(
                    "model id and provider must not be empty".to_string(),
                ));
            }
            if !(m.context_window_tokens > m.max_output_tokens && m.max_output_tokens > 0) {
                return Err(CatalogError::InvalidDefinition(alloc::format!(
                    "context window ({}) must exceed max output tokens ({}) which must be positive",
                    m.context_window_tokens,
                    m.max_output_tokens
                )));
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// In-memory state of both stores.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    local: Vec<ResourceRecord>,
    global: Vec<ResourceRecord>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a catalog from persisted records. Records found in the wrong
    /// list are kept where their own `scope` field says they belong.
    pub fn from_records(local: Vec<ResourceRecord>, global: Vec<ResourceRecord>) -> Self {
        let mut cat = Catalog::new();
        for r in local.into_iter().chain(global) {
            cat.store_mut(r.scope()).push(r);
        }
        cat.sort();
        cat
    }

    pub fn records(&self, scope: Scope) -> &[ResourceRecord] {
        match scope {
            Scope::Local => &self.local,
            Scope::Global => &self.global,
        }
    }

    fn store_mut(&mut self, scope: Scope) -> &mut Vec<ResourceRecord> {
        match scope {
            Scope::Local => &mut self.local,
            Scope::Global => &mut self.global,
        }
    }

    fn sort(&mut self) {
        for store in [&mut self.local, &mut self.global] {
            store.sort_by(|a, b| {
                (a.kind(), a.name(), a.version()).cmp(&(b.kind(), b.name(), b.version()))
            });
        }
    }

    fn versions<'a, 'n>(
        &'a self,
        kind: ResourceKind,
        name: &'n str,
        scope: Scope,
    ) -> impl Iterator<Item = &'a ResourceRecord> + use<'a, 'n> {
        self.records(scope)
            .iter()
            .filter(move |r| r.kind() == kind && r.name() == name)
    }

    fn max_version(&self, kind: ResourceKind, name: &str, scope: Scope) -> Option<u32> {
        self.versions(kind, name, scope).map(|r| r.version()).max()
    }

    pub fn create(
        &mut self,
        scope: Scope,
        def: ResourceDefinition,
        created_at: String,
    ) -> Result<ResourceRecord, CatalogError> {
        validate(&def)?;
        let kind = def.kind();
        if self.max_version(kind, def.name(), scope).is_some() {
            return Err(CatalogError::DuplicateResource {
                kind,
                name: def.name().to_string(),
                scope,
            });
        }
        let record = def.into_record(1, scope, created_at);
        self.store_mut(scope).push(record.clone());
        self.sort();
        Ok(record)
    }

    /// Appends a new version. With `scope` unset the resource is looked up
    /// LOCAL first, then GLOBAL.
    pub fn update(
        &mut self,
        scope: Option<Scope>,
        def: ResourceDefinition,
        created_at: String,
    ) -> Result<ResourceRecord, CatalogError> {
        validate(&def)?;
        let kind = def.kind();
        let name = def.name().to_string();
        let candidates: &[Scope] = match scope {
            Some(Scope::Local) => &[Scope::Local],
            Some(Scope::Global) => &[Scope::Global],
            None => &[Scope::Local, Scope::Global],
        };
        let (target, max) = candidates
            .iter()
            .find_map(|s| self.max_version(kind, &name, *s).map(|v| (*s, v)))
            .ok_or(CatalogError::NotFound { kind, name })?;
        let record = def.into_record(max + 1, target, created_at);
        self.store_mut(target).push(record.clone());
        self.sort();
        Ok(record)
    }

    /// Latest version when `version` is `None`. LOCAL shadows GLOBAL.
    pub fn resolve(
        &self,
        kind: ResourceKind,
        name: &str,
        version: Option<u32>,
    ) -> Result<&ResourceRecord, CatalogError> {
        for scope in [Scope::Local, Scope::Global] {
            let mut versions = self.versions(kind, name, scope).peekable();
            if versions.peek().is_none() {
                continue;
            }
            return match version {
                None => Ok(versions.max_by_key(|r| r.version()).unwrap()),
                Some(v) => versions.find(|r| r.version() == v).ok_or_else(|| {
                    CatalogError::VersionNotFound {
                        kind,
                        name: name.to_string(),
                        version: v,
                    }
                }),
            };
        }
        Err(CatalogError::NotFound {
            kind,
            name: name.to_string(),
        })
    }

    /// Removes every version of `(kind, name)` in `scope`; returns how many.
    pub fn delete(&mut self, kind: ResourceKind, name: &str, scope: Scope) -> usize {
        let store = self.store_mut(scope);
        let before = store.len();
        store.retain(|r| !(r.kind() == kind && r.name() == name));
        before - store.len()
    }

    /// Every record of `kind` across both scopes, LOCAL first.
    pub fn list(&self, kind: ResourceKind) -> Vec<&ResourceRecord> {
        self.local
            .iter()
            .chain(self.global.iter())
            .filter(|r| r.kind() == kind)
            .collect()
    }

    /// Version numbers per `(kind, name, scope)`, for invariant checks.
    pub fn version_map(&self) -> BTreeMap<(ResourceKind, String, Scope), Vec<u32>> {
        let mut map: BTreeMap<_, Vec<u32>> = BTreeMap::new();
        for r in self.local.iter().chain(self.global.iter()) {
            map.entry((r.kind(), r.name().to_string(), r.scope()))
                .or_default()
                .push(r.version());
        }
        map
    }
}
