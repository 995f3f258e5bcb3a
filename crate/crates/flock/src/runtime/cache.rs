//! Persistent prediction cache: one JSON object per line in
//! `<dir>/predictions.jsonl`, indexed in memory at open.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use flock_core::Value;
use serde::{Deserialize, Serialize};

pub const CACHE_FILE: &str = "predictions.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("cache I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    value: Value,
}

/// Key-value store shared by all jobs of a process. Reads take a shared
/// lock; writes are serialized and appended to disk immediately.
#[derive(Debug, Default)]
pub struct Cache {
    path: Option<PathBuf>,
    map: RwLock<HashMap<String, Value>>,
    file: Mutex<Option<File>>,
}

impl Cache {
    /// Cache that lives only as long as the process.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) the cache under `dir`. Unreadable lines, such as a
    /// torn final write, are skipped.
    pub fn open(dir: &Path) -> Result<Self, CacheError> {
        let io = |source| CacheError::Io {
            path: dir.to_path_buf(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        let path = dir.join(CACHE_FILE);
        let mut map = HashMap::new();
        if path.exists() {
            let f = File::open(&path).map_err(io)?;
            for line in BufReader::new(f).lines() {
                let line = line.map_err(io)?;
                if let Ok(e) = serde_json::from_str::<Entry>(&line) {
                    map.insert(e.key, e.value);
                }
            }
        }
        let torn = std::fs::read(&path).is_ok_and(|b| b.last().is_some_and(|c| *c != b'\n'));
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io)?;
        if torn {
            file.write_all(b"\n").map_err(io)?;
        }
        Ok(Cache {
            path: Some(path),
            map: RwLock::new(map),
            file: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<Value> {
        self.map.read().unwrap().get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn put(&self, key: String, value: Value) -> Result<(), CacheError> {
        let mut file = self.file.lock().unwrap();
        if let Some(f) = file.as_mut() {
            let line = serde_json::to_string(&Entry {
                key: key.clone(),
                value: value.clone(),
            })
            .expect("cache entries serialize");
            writeln!(f, "{line}").map_err(|source| CacheError::Io {
                path: self.path.clone().unwrap_or_default(),
                source,
            })?;
        }
        self.map.write().unwrap().insert(key, value);
        Ok(())
    }

    /// Drops every entry, on disk too.
    pub fn clear(&self) -> Result<(), CacheError> {
        let mut file = self.file.lock().unwrap();
        if let Some(path) = &self.path {
            *file = Some(File::create(path).map_err(|source| CacheError::Io {
                path: path.clone(),
                source,
            })?);
        }
        self.map.write().unwrap().clear();
        Ok(())
    }
}

/// Removes the cache file under `dir`; returns whether one existed.
pub fn clear_dir(dir: &Path) -> Result<bool, CacheError> {
    let path = dir.join(CACHE_FILE);
    match std::fs::remove_file(&path) {
        Ok(()) => Ok(true),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
        Err(source) => Err(CacheError::Io { path, source }),
    }
}
