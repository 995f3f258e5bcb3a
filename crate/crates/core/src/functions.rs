//! Semantic function catalog: names, arity, output contracts, argument
//! specs and response parsing.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::prompt::{OutputContract, OutputKind, Tuple};
use crate::value::{canonical_json, DataType, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticFunction {
    Complete,
    CompleteJson,
    Filter,
    Embedding,
    Reduce,
    ReduceJson,
    Rerank,
    First,
    Last,
}

impl SemanticFunction {
    pub const ALL: [SemanticFunction; 9] = [
        SemanticFunction::Complete,
        SemanticFunction::CompleteJson,
        SemanticFunction::Filter,
        SemanticFunction::Embedding,
        SemanticFunction::Reduce,
        SemanticFunction::ReduceJson,
        SemanticFunction::Rerank,
        SemanticFunction::First,
        SemanticFunction::Last,
    ];

    pub fn name(self) -> &'static str {
        use SemanticFunction::*;
        match self {
            Complete => "llm_complete",
            CompleteJson => "llm_complete_json",
            Filter => "llm_filter",
            Embedding => "llm_embedding",
            Reduce => "llm_reduce",
            ReduceJson => "llm_reduce_json",
            Rerank => "llm_rerank",
            First => "llm_first",
            Last => "llm_last",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(name))
    }

    pub fn is_aggregate(self) -> bool {
        use SemanticFunction::*;
        matches!(self, Reduce | ReduceJson | Rerank | First | Last)
    }

    pub fn takes_prompt(self) -> bool {
        self != SemanticFunction::Embedding
    }

    /// Number of arguments: model map, prompt map (except embeddings), tuple map.
    pub fn arity(self) -> usize {
        if self.takes_prompt() {
            3
        } else {
            2
        }
    }

    pub fn output_type(self, embedding_dimension: Option<u32>) -> DataType {
        use SemanticFunction::*;
        match self {
            Complete | Reduce => DataType::Text,
            CompleteJson | ReduceJson | Rerank | First | Last => DataType::Json,
            Filter => DataType::Bool,
            Embedding => DataType::DoubleArray(embedding_dimension.map(|d| d as usize)),
        }
    }

    pub fn contract(self) -> OutputContract {
        use SemanticFunction::*;
        OutputContract::new(match self {
            Complete | Embedding => OutputKind::TextPerTuple,
            CompleteJson => OutputKind::JsonPerTuple,
            Filter => OutputKind::BoolPerTuple,
            Reduce => OutputKind::SingleText,
            ReduceJson => OutputKind::SingleJson,
            Rerank | First | Last => OutputKind::Ranking,
        })
    }

    /// Whether the provider should be asked for JSON mode.
    pub fn json_mode(self) -> bool {
        self != SemanticFunction::Embedding
    }

    pub fn signature(self) -> &'static str {
        use SemanticFunction::*;
        match self {
            Complete => "llm_complete({model}, {prompt}, {tuple}) -> TEXT",
            CompleteJson => "llm_complete_json({model}, {prompt}, {tuple}) -> JSON",
            Filter => "llm_filter({model}, {prompt}, {tuple}) -> BOOLEAN",
            Embedding => "llm_embedding({model}, {tuple}) -> DOUBLE[n]",
            Reduce => "llm_reduce({model}, {prompt}, {tuple}) -> TEXT (aggregate)",
            ReduceJson => "llm_reduce_json({model}, {prompt}, {tuple}) -> JSON (aggregate)",
            Rerank => "llm_rerank({model}, {prompt}, {tuple}) -> JSON array (aggregate)",
            First => "llm_first({model}, {prompt}, {tuple}) -> JSON (aggregate)",
            Last => "llm_last({model}, {prompt}, {tuple}) -> JSON (aggregate)",
        }
    }

    pub fn summary(self) -> &'static str {
        use SemanticFunction::*;
        match self {
            Complete => "generates text from one input tuple",
            CompleteJson => "generates a JSON value from one input tuple",
            Filter => "returns true or false for one input tuple",
            Embedding => "embeds the tuple values as a fixed-length vector",
            Reduce => "summarizes a group of tuples into one text",
            ReduceJson => "summarizes a group of tuples into one JSON value",
            Rerank => "orders the tuples of a group by relevance",
            First => "returns the most relevant tuple of a group",
            Last => "returns the least relevant tuple of a group",
        }
    }
}

impl fmt::Display for SemanticFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Non-semantic scalar functions known to the binder.
pub const BUILTIN_SCALARS: &[&str] = &[
    "fusion",
    "fusion_rrf",
    "fusion_combsum",
    "fusion_combmnz",
    "fusion_combmed",
    "fusion_combanz",
    "array_cosine_similarity",
    "match_bm25",
    "coalesce",
    "lower",
    "upper",
    "length",
    "abs",
];

pub const BUILTIN_AGGREGATES: &[&str] = &["count", "sum", "min", "max", "avg"];

/// Whether `name` is callable from SQL.
pub fn is_known_function(name: &str) -> bool {
    SemanticFunction::from_name(name).is_some()
        || BUILTIN_SCALARS.iter().any(|f| f.eq_ignore_ascii_case(name))
        || BUILTIN_AGGREGATES
            .iter()
            .any(|f| f.eq_ignore_ascii_case(name))
}

/// Reference card listing every callable function, used by ASK prompts and
/// the docs.
pub fn reference_card() -> String {
    let mut out = String::from("Semantic functions:\n");
    for f in SemanticFunction::ALL {
        out.push_str(&alloc::format!("- {}: {}\n", f.signature(), f.summary()));
    }
    out.push_str(
        "  {model} is {'model': '<model id>'} or {'model_name': '<catalog model>'} with optional 'version'.\n",
    );
    out.push_str(
        "  {prompt} is {'prompt': '<instructions>'} or {'prompt_name': '<catalog prompt>'} with optional 'version'.\n",
    );
    out.push_str(
        "  {tuple} maps labels to columns, e.g. {'title': t.title, 'abstract': t.abstract}.\n",
    );
    out.push_str("Other scalar functions: ");
    out.push_str(&BUILTIN_SCALARS.join(", "));
    out.push_str("\nAggregates: ");
    out.push_str(&BUILTIN_AGGREGATES.join(", "));
    out.push_str(", plus MAX(x) OVER () as a window\n");
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelSpec {
    Named { name: String, version: Option<u32> },
    Inline { model_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptSpec {
    Named { name: String, version: Option<u32> },
    Inline { text: String },
}

/// Prompt text after catalog resolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedPrompt {
    pub text: String,
    pub name: Option<String>,
    pub version: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvelopeError {
    #[error("response is not a JSON object: {0}")]
    NotJson(String),
    #[error("response lacks the '{0}' field")]
    MissingField(&'static str),
    #[error("ranking is not a permutation of 0..{0}")]
    InvalidPermutation(usize),
}

/// Per-tuple answers in batch-local id order.
#[derive(Debug, Clone, PartialEq)]
pub struct TupleAnswers {
    pub values: Vec<Value>,
    /// Ids absent from the envelope; their values are NULL.
    pub missing: usize,
}

fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    let t = t
        .strip_prefix("```json")
        .or_else(|| t.strip_prefix("```"))
        .unwrap_or(t);
    t.strip_suffix("```").unwrap_or(t).trim()
}

fn parse_object(text: &str) -> Result<serde_json::Map<String, serde_json::Value>, EnvelopeError> {
    let t = strip_fences(text);
    let candidate = match (t.find('{'), t.rfind('}')) {
        (Some(a), Some(b)) if b > a => &t[a..=b],
        _ => t,
    };
    match serde_json::from_str::<serde_json::Value>(candidate) {
        Ok(serde_json::Value::Object(map)) => Ok(map),
        _ => Err(EnvelopeError::NotJson(truncate(text, 80))),
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

/// Converts one answer value according to the contract. Unusable answers
/// become NULL.
pub fn coerce_answer(kind: OutputKind, v: &serde_json::Value) -> Value {
    match (kind, v) {
        (_, serde_json::Value::Null) => Value::Null,
        (OutputKind::BoolPerTuple, serde_json::Value::Bool(b)) => Value::Bool(*b),
        (OutputKind::BoolPerTuple, serde_json::Value::String(s)) => {
            match s.trim().to_ascii_lowercase().as_str() {
                "true" => Value::Bool(true),
                "false" => Value::Bool(false),
                _ => Value::Null,
            }
        }
        (OutputKind::BoolPerTuple, _) => Value::Null,
        (OutputKind::TextPerTuple | OutputKind::SingleText, serde_json::Value::String(s)) => {
            Value::Text(s.clone())
        }
        (OutputKind::TextPerTuple | OutputKind::SingleText, other) => {
            Value::Text(canonical_json(other))
        }
        (_, other) => Value::Json(other.clone()),
    }
}

/// Parses `{"answers": [{"id": i, "value": v}, ...]}` for a batch of `n`.
pub fn parse_answers(
    text: &str,
    kind: OutputKind,
    n: usize,
) -> Result<TupleAnswers, EnvelopeError> {
    let obj = parse_object(text)?;
    let answers = obj
        .get("answers")
        .and_then(|a| a.as_array())
        .ok_or(EnvelopeError::MissingField("answers"))?;
    let mut values: Vec<Option<Value>> = alloc::vec![None; n];
    for a in answers {
        let id = a.get("id").and_then(|id| {
            id.as_u64()
                .or_else(|| id.as_str().and_then(|s| s.parse().ok()))
        });
        let Some(id) = id.map(|i| i as usize).filter(|i| *i < n) else {
            continue;
        };
        if values[id].is_none() {
            let v = a.get("value").unwrap_or(&serde_json::Value::Null);
            values[id] = Some(coerce_answer(kind, v));
        }
    }
    let missing = values.iter().filter(|v| v.is_none()).count();
    Ok(TupleAnswers {
        values: values
            .into_iter()
            .map(|v| v.unwrap_or(Value::Null))
            .collect(),
        missing,
    })
}

/// Parses `{"answer": v}`.
pub fn parse_single(text: &str, kind: OutputKind) -> Result<Value, EnvelopeError> {
    let obj = parse_object(text)?;
    let v = obj
        .get("answer")
        .ok_or(EnvelopeError::MissingField("answer"))?;
    Ok(coerce_answer(kind, v))
}

/// Parses `{"ranking": [...]}` and checks it is a permutation of `0..n`.
pub fn parse_ranking(text: &str, n: usize) -> Result<Vec<usize>, EnvelopeError> {
    let obj = parse_object(text)?;
    let ranking = obj
        .get("ranking")
        .and_then(|r| r.as_array())
        .ok_or(EnvelopeError::MissingField("ranking"))?;
    let ids: Option<Vec<usize>> = ranking
        .iter()
        .map(|v| v.as_u64().map(|i| i as usize))
        .collect();
    let ids = ids.ok_or(EnvelopeError::InvalidPermutation(n))?;
    if !is_permutation(&ids, n) {
        return Err(EnvelopeError::InvalidPermutation(n));
    }
    Ok(ids)
}

pub fn is_permutation(ids: &[usize], n: usize) -> bool {
    if ids.len() != n {
        return false;
    }
    let mut seen = alloc::vec![false; n];
    for &i in ids {
        if i >= n || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

/// Listwise reranking windows over `n` items, from the tail of the list to
/// its head: `size` items per window, windows `stride` apart.
pub fn rerank_windows(n: usize, size: usize, stride: usize) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let size = size.max(1);
    let stride = stride.max(1);
    let mut end = n;
    loop {
        let start = end.saturating_sub(size);
        out.push(start..end);
        if start == 0 {
            break;
        }
        end -= stride;
    }
    out
}

/// Embedding input: the tuple's values ordered by label, one per line.
pub fn embedding_text(tuple: &Tuple) -> String {
    let mut fields: Vec<&(String, Value)> = tuple.fields.iter().collect();
    fields.sort_by(|a, b| a.0.cmp(&b.0));
    fields
        .iter()
        .map(|(_, v)| v.render())
        .collect::<Vec<_>>()
        .join("\n")
}

/// JSON object form of a tuple, used in rerank results.
pub fn tuple_to_json(tuple: &Tuple) -> serde_json::Value {
    let mut map = serde_json::Map::new();
    for (k, v) in &tuple.fields {
        map.insert(k.to_string(), v.to_json());
    }
    serde_json::Value::Object(map)
}
