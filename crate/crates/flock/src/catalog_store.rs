//! JSON persistence for the two catalog stores.

use std::path::{Path, PathBuf};

use flock_core::catalog::{Catalog, ResourceRecord, Scope};

pub const GLOBAL_CATALOG_ENV: &str = "FLOCK_GLOBAL_CATALOG";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("catalog file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("catalog file {path} is not valid: {source}")]
    Format {
        path: PathBuf,
        source: serde_json::Error,
    },
}

/// Locations of the LOCAL and GLOBAL store files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogStore {
    pub local: PathBuf,
    pub global: PathBuf,
}

/// `$FLOCK_GLOBAL_CATALOG`, else `$XDG_DATA_HOME/flock/catalog.json`, else
/// `~/.local/share/flock/catalog.json`.
pub fn default_global_path() -> PathBuf {
    if let Some(p) = std::env::var_os(GLOBAL_CATALOG_ENV) {
        return PathBuf::from(p);
    }
    let base = std::env::var_os("XDG_DATA_HOME")
        .map(PathBuf::from)
        .or_else(|| std::env::var_os("HOME").map(|h| Path::new(&h).join(".local/share")))
        .unwrap_or_else(|| PathBuf::from("."));
    base.join("flock").join("catalog.json")
}

impl CatalogStore {
    /// Local store inside `workspace/.flock`, global store at the default
    /// location.
    pub fn for_workspace(workspace: &Path) -> Self {
        CatalogStore {
            local: workspace.join(".flock").join("catalog.json"),
            global: default_global_path(),
        }
    }

    pub fn load(&self) -> Result<Catalog, StoreError> {
        Ok(Catalog::from_records(
            read(&self.local)?,
            read(&self.global)?,
        ))
    }

    pub fn save(&self, catalog: &Catalog) -> Result<(), StoreError> {
        write(&self.local, catalog.records(Scope::Local))?;
        write(&self.global, catalog.records(Scope::Global))
    }
}

fn read(path: &Path) -> Result<Vec<ResourceRecord>, StoreError> {
    match std::fs::read_to_string(path) {
        Ok(text) if text.trim().is_empty() => Ok(Vec::new()),
        Ok(text) => serde_json::from_str(&text).map_err(|source| StoreError::Format {
            path: path.to_path_buf(),
            source,
        }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(source) => Err(StoreError::Io {
            path: path.to_path_buf(),
            source,
        }),
    }
}

/// Writes through a temporary file so a crash never leaves half a store.
fn write(path: &Path, records: &[ResourceRecord]) -> Result<(), StoreError> {
    let io = |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let text = serde_json::to_string_pretty(records).expect("records serialize");
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text + "\n").map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use flock_core::catalog::{PromptDefinition, ResourceDefinition, ResourceKind};

    fn prompt(name: &str, text: &str) -> ResourceDefinition {
        ResourceDefinition::Prompt(PromptDefinition {
            name: name.into(),
            text: text.into(),
        })
    }

    #[test]
    fn round_trip_preserves_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let store = CatalogStore {
            local: dir.path().join("local/catalog.json"),
            global: dir.path().join("global/catalog.json"),
        };
        let mut cat = store.load().unwrap();
        cat.create(Scope::Local, prompt("p", "one"), "t".into())
            .unwrap();
        cat.update(None, prompt("p", "two"), "t".into()).unwrap();
        cat.create(Scope::Global, prompt("g", "glob"), "t".into())
            .unwrap();
        cat.create(Scope::Global, prompt("p", "shadowed"), "t".into())
            .unwrap();
        store.save(&cat).unwrap();
        let back = store.load().unwrap();
        assert_eq!(back, cat);
        let r = back.resolve(ResourceKind::Prompt, "p", None).unwrap();
        assert_eq!((r.version(), r.scope()), (2, Scope::Local));
        let mut cat = back;
        assert_eq!(cat.delete(ResourceKind::Prompt, "p", Scope::Local), 2);
        store.save(&cat).unwrap();
        let r = store.load().unwrap();
        assert_eq!(
            r.resolve(ResourceKind::Prompt, "p", None).unwrap().scope(),
            Scope::Global
        );
    }
}
