//! Inference batch planning: deduplication, context budgets, greedy
//! packing, overflow backoff and cache keys.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::ModelParams;
use crate::prompt::{estimate_tokens, BatchSizer, OutputContract, SerializationFormat, Tuple};

/// How tuples are grouped into provider requests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum BatchMode {
    /// Pack as many tuples as fit in the context window.
    #[default]
    Auto,
    /// Fixed number of tuples per request.
    Manual(usize),
}

impl fmt::Display for BatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BatchMode::Auto => f.write_str("Auto"),
            BatchMode::Manual(n) => write!(f, "Manual({n})"),
        }
    }
}

impl Serialize for BatchMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BatchMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(0) => Err(serde::de::Error::custom("batch size must be at least 1")),
            Raw::Int(n) => Ok(BatchMode::Manual(n as usize)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl core::str::FromStr for BatchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("auto") {
            return Ok(BatchMode::Auto);
        }
        let inner = t
            .strip_prefix("Manual(")
            .or_else(|| t.strip_prefix("manual("))
            .and_then(|r| r.strip_suffix(')'))
            .unwrap_or(t);
        match inner.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(BatchMode::Manual(n)),
            _ => Err(alloc::format!("invalid batch mode '{s}'")),
        }
    }
}

/// Unique tuples plus, for every input row, the index of its unique tuple.
/// All-NULL rows map to `None` and are never sent.
#[derive(Debug, Clone, PartialEq)]
pub struct Dedup {
    pub unique: Vec<Tuple>,
    pub back_map: Vec<Option<usize>>,
}

pub fn dedup(rows: &[Tuple]) -> Dedup {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut unique = Vec::new();
    let mut back_map = Vec::with_capacity(rows.len());
    for row in rows {
        if row.is_all_null() {
            back_map.push(None);
            continue;
        }
        let idx = *seen.entry(row.canonical()).or_insert_with(|| {
            unique.push(row.clone());
            unique.len() - 1
        });
        back_map.push(Some(idx));
    }
    Dedup { unique, back_map }
}

/// Maps per-unique results back to input rows.
pub fn expand<T: Clone>(back_map: &[Option<usize>], unique: &[T], null: T) -> Vec<T> {
    back_map
        .iter()
        .map(|i| i.map_or_else(|| null.clone(), |i| unique[i].clone()))
        .collect()
}

/// Tokens left for serialized tuples:
/// `window - prefix - min(max_output, window / 4)`.
pub fn compute_budget(window: u32, max_output: u32, prefix_tokens: usize) -> usize {
    let reserve = max_output.min(window / 4) as usize;
    (window as usize)
        .saturating_sub(prefix_tokens)
        .saturating_sub(reserve)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedBatch {
    pub range: Range<usize>,
    /// A lone tuple that alone exceeds the budget.
    pub oversized: bool,
}

/// Splits `rows` into consecutive batches. In `Auto` mode a batch grows while
/// its serialized form stays within `budget_tokens`.
pub fn plan_batches(
    rows: &[Tuple],
    format: SerializationFormat,
    mode: BatchMode,
    budget_tokens: usize,
) -> Vec<PlannedBatch> {
    let labels: Vec<&str> = rows
        .first()
        .map(|r| r.labels().collect())
        .unwrap_or_default();
    let fits = |chars: usize| chars.div_ceil(4) <= budget_tokens;
    match mode {
        BatchMode::Manual(n) => chunk(0..rows.len(), n.max(1))
            .into_iter()
            .map(|range| {
                let oversized = range.len() == 1 && {
                    let mut s = BatchSizer::new(format, &labels);
                    s.push(&rows[range.start]);
                    !fits(s.chars())
                };
                PlannedBatch { range, oversized }
            })
            .collect(),
        BatchMode::Auto => {
            let mut out = Vec::new();
            let mut start = 0;
            let mut sizer = BatchSizer::new(format, &labels);
            for (i, row) in rows.iter().enumerate() {
                if !sizer.is_empty() && !fits(sizer.chars_with(row)) {
                    out.push(PlannedBatch {
                        range: start..i,
                        oversized: false,
                    });
                    start = i;
                    sizer = BatchSizer::new(format, &labels);
                }
                sizer.push(row);
                if sizer.len() == 1 && !fits(sizer.chars()) {
                    out.push(PlannedBatch {
                        range: i..i + 1,
                        oversized: true,
                    });
                    start = i + 1;
                    sizer = BatchSizer::new(format, &labels);
                }
            }
            if !sizer.is_empty() {
                out.push(PlannedBatch {
                    range: start..rows.len(),
                    oversized: false,
                });
            }
            out
        }
    }
}

/// Consecutive chunks of at most `size`.
pub fn chunk(range: Range<usize>, size: usize) -> Vec<Range<usize>> {
    let size = size.max(1);
    let mut out = Vec::new();
    let mut s = range.start;
    while s < range.end {
        let e = (s + size).min(range.end);
        out.push(s..e);
        s = e;
    }
    out
}

/// Next batch size after a context overflow: 90% rounded down, at least one
/// smaller, never below 1.
pub fn shrink(n: usize) -> usize {
    (n * 9 / 10).min(n.saturating_sub(1)).max(1)
}

/// Sizes tried for one batch of `n` tuples when every size above `fits_at`
/// overflows. Ends with the first fitting size, or with 1 if even a single
/// tuple overflows.
pub fn backoff_sequence(n: usize, fits_at: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut size = n;
    loop {
        out.push(size);
        if size <= fits_at || size == 1 {
            return out;
        }
        size = shrink(size);
    }
}

/// Inputs that determine a cached prediction. Catalog names and versions are
/// deliberately absent: two specs that resolve to the same content share
/// entries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CacheKeyParts<'a> {
    pub provider: &'a str,
    pub model_id: &'a str,
    pub params: &'a ModelParams,
    pub function: &'a str,
    pub prompt: &'a str,
    pub format: SerializationFormat,
    pub contract: &'a OutputContract,
    pub template: Option<&'a str>,
}

impl CacheKeyParts<'_> {
    /// Hex sha256 over the parts and the canonical input (one tuple, or a
    /// whole group for aggregates).
    pub fn key(&self, canonical_input: &str) -> String {
        let head = serde_json::to_string(self).unwrap_or_default();
        let mut h = Sha256::new();
        h.update((head.len() as u64).to_le_bytes());
        h.update(head.as_bytes());
        h.update(canonical_input.as_bytes());
        hex::encode(h.finalize())
    }
}

/// Canonical form of a group of tuples for aggregate cache keys.
pub fn canonical_group(rows: &[Tuple]) -> String {
    let mut s = String::from("[");
    for (i, r) in rows.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&r.canonical());
    }
    s.push(']');
    s
}

/// Rough token count of a prompt prefix.
pub fn prefix_tokens(prefix: &str) -> usize {
    estimate_tokens(prefix)
}
