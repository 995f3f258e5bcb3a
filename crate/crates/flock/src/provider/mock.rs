//! Deterministic, scriptable provider for offline runs and tests.
//!
//! Requests are matched against rules in order; the first match answers.
//! Without a matching rule the auto-responder reads the `Contract:` line of
//! the prompt, decodes the serialized tuples and produces a well-formed
//! envelope whose values depend only on each tuple's content.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use flock_core::prompt::{decode_tuples, DecodedTuple, SerializationFormat};
use serde_json::{json, Value as Json};
use sha2::{Digest, Sha256};

use super::{ChatRequest, ChatResponse, ErrorKind, Provider, ProviderError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestKind {
    Chat,
    Embed,
}

/// One request as the mock saw it.
#[derive(Debug, Clone, PartialEq)]
pub struct MockRequest {
    pub kind: RequestKind,
    pub model_id: String,
    pub system_text: String,
    pub user_text: String,
    /// Tuples in a chat request, texts in an embedding request.
    pub tuple_count: usize,
}

#[derive(Clone)]
pub enum Matcher {
    Any,
    Model(String),
    SystemContains(String),
    UserContains(String),
    /// Chat requests carrying more than this many tuples.
    TuplesAbove(usize),
    Embeddings,
    All(Vec<Matcher>),
}

impl Matcher {
    fn matches(&self, r: &MockRequest) -> bool {
        match self {
            Matcher::Any => true,
            Matcher::Model(m) => &r.model_id == m,
            Matcher::SystemContains(s) => r.system_text.contains(s.as_str()),
            Matcher::UserContains(s) => r.user_text.contains(s.as_str()),
            Matcher::TuplesAbove(n) => r.kind == RequestKind::Chat && r.tuple_count > *n,
            Matcher::Embeddings => r.kind == RequestKind::Embed,
            Matcher::All(ms) => ms.iter().all(|m| m.matches(r)),
        }
    }
}

pub type TupleFn = Arc<dyn Fn(&DecodedTuple) -> Json + Send + Sync>;

#[derive(Clone)]
pub enum Responder {
    Text(String),
    /// Answers in order; the last entry repeats once the list is spent.
    Sequence(Vec<Result<String, ProviderError>>),
    Error(ProviderError),
    /// Returns the user message unchanged.
    Echo,
    /// Builds an `answers` envelope from a value per decoded tuple.
    PerTuple(TupleFn),
    /// The built-in contract-aware responder.
    Auto,
}

#[derive(Clone)]
pub struct Rule {
    pub matcher: Matcher,
    pub responder: Responder,
}

impl Rule {
    pub fn new(matcher: Matcher, responder: Responder) -> Self {
        Rule { matcher, responder }
    }
}

/// Simulated service time: `fixed + per_tuple * n`, multiplied by `scale`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Latency {
    pub fixed: Duration,
    pub per_tuple: Duration,
    pub scale: f64,
}

impl Latency {
    pub fn new(fixed_ms: u64, per_tuple_ms: u64, scale: f64) -> Self {
        Latency {
            fixed: Duration::from_millis(fixed_ms),
            per_tuple: Duration::from_millis(per_tuple_ms),
            scale,
        }
    }

    pub fn for_tuples(&self, n: usize) -> Duration {
        (self.fixed + self.per_tuple * n as u32).mul_f64(self.scale)
    }
}

pub const DEFAULT_EMBEDDING_DIMENSION: usize = 8;

#[derive(Default)]
pub struct MockProvider {
    rules: Vec<Rule>,
    cursors: Mutex<Vec<usize>>,
    latency: Latency,
    overflow_above: Option<usize>,
    dimensions: BTreeMap<String, usize>,
    log: Mutex<Vec<MockRequest>>,
    calls: AtomicUsize,
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_rule(mut self, rule: Rule) -> Self {
        self.rules.push(rule);
        self.cursors.get_mut().unwrap().push(0);
        self
    }

    pub fn with_latency(mut self, latency: Latency) -> Self {
        self.latency = latency;
        self
    }

    /// Chat requests with more than `n` tuples fail with a context overflow.
    pub fn overflow_above(mut self, n: usize) -> Self {
        self.overflow_above = Some(n);
        self
    }

    pub fn with_dimension(mut self, model_id: &str, dimension: usize) -> Self {
        self.dimensions.insert(model_id.to_string(), dimension);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<MockRequest> {
        self.log.lock().unwrap().clone()
    }

    pub fn reset_log(&self) {
        self.log.lock().unwrap().clear();
        self.calls.store(0, Ordering::SeqCst);
    }

    fn record(&self, r: MockRequest) -> Option<(usize, Rule)> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let hit = self
            .rules
            .iter()
            .enumerate()
            .find(|(_, rule)| rule.matcher.matches(&r))
            .map(|(i, rule)| (i, rule.clone()));
        self.log.lock().unwrap().push(r);
        hit
    }

    fn sequence_step(
        &self,
        rule: usize,
        seq: &[Result<String, ProviderError>],
    ) -> Result<String, ProviderError> {
        let mut cursors = self.cursors.lock().unwrap();
        let i = cursors[rule].min(seq.len().saturating_sub(1));
        cursors[rule] += 1;
        seq.get(i)
            .cloned()
            .unwrap_or_else(|| Err(ProviderError::new(ErrorKind::Fatal, "empty mock sequence")))
    }

    fn dimension(&self, model_id: &str) -> usize {
        self.dimensions
            .get(model_id)
            .copied()
            .unwrap_or(DEFAULT_EMBEDDING_DIMENSION)
    }
}

fn response(text: String, req: &ChatRequest) -> ChatResponse {
    ChatResponse {
        prompt_tokens: req.estimated_tokens() as u64,
        completion_tokens: flock_core::prompt::estimate_tokens(&text) as u64,
        text,
    }
}

impl Provider for MockProvider {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let seen = MockRequest {
            kind: RequestKind::Chat,
            model_id: req.model_id.clone(),
            system_text: req.system_text.clone(),
            user_text: req.user_text.clone(),
            tuple_count: req.tuple_count,
        };
        let rule = self.record(seen);
        std::thread::sleep(self.latency.for_tuples(req.tuple_count));
        if let Some(n) = self.overflow_above {
            if req.tuple_count > n {
                return Err(ProviderError::new(
                    ErrorKind::ContextOverflow,
                    format!(
                        "maximum context length exceeded: {} tuples",
                        req.tuple_count
                    ),
                ));
            }
        }
        let text = match rule {
            None => auto_response(req),
            Some((i, rule)) => match &rule.responder {
                Responder::Text(t) => t.clone(),
                Responder::Sequence(seq) => self.sequence_step(i, seq)?,
                Responder::Error(e) => return Err(e.clone()),
                Responder::Echo => req.user_text.clone(),
                Responder::PerTuple(f) => {
                    let (_, tuples) = decode_any(&req.user_text);
                    let answers: Vec<Json> = tuples
                        .iter()
                        .map(|t| json!({"id": t.id, "value": f(t)}))
                        .collect();
                    json!({ "answers": answers }).to_string()
                }
                Responder::Auto => auto_response(req),
            },
        };
        Ok(response(text, req))
    }

    fn embed(&self, model_id: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let seen = MockRequest {
            kind: RequestKind::Embed,
            model_id: model_id.to_string(),
            system_text: String::new(),
            user_text: texts.join("\n"),
            tuple_count: texts.len(),
        };
        let rule = self.record(seen);
        std::thread::sleep(self.latency.for_tuples(texts.len()));
        match rule.map(|(i, r)| (i, r.responder)) {
            Some((_, Responder::Error(e))) => return Err(e),
            Some((i, Responder::Sequence(seq))) => {
                self.sequence_step(i, &seq)?;
            }
            _ => {}
        }
        let d = self.dimension(model_id);
        Ok(texts.iter().map(|t| hashed_embedding(t, d)).collect())
    }
}

/// Bag-of-words embedding: each token adds one to a hashed coordinate. The
/// result is unit length and never the zero vector.
pub fn hashed_embedding(text: &str, dimension: usize) -> Vec<f64> {
    let d = dimension.max(1);
    let mut v = vec![0.0; d];
    for tok in words(text) {
        let h = Sha256::digest(tok.as_bytes());
        let idx = u64::from_le_bytes(h[..8].try_into().unwrap()) % d as u64;
        v[idx as usize] += 1.0;
    }
    if v.iter().all(|x| *x == 0.0) {
        v[0] = 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / norm).collect()
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Guesses the serialization format from the batch text and decodes it.
fn decode_any(text: &str) -> (SerializationFormat, Vec<DecodedTuple>) {
    let format = if text.contains("<tuple id=") {
        SerializationFormat::Xml
    } else if text.contains("\"_id\"") {
        SerializationFormat::Json
    } else {
        SerializationFormat::Markdown
    };
    (format, decode_tuples(text, format).unwrap_or_default())
}

const STOPWORDS: &[&str] = &[
    "about",
    "abstract",
    "according",
    "based",
    "content",
    "given",
    "into",
    "related",
    "return",
    "that",
    "their",
    "these",
    "this",
    "those",
    "title",
    "tuple",
    "tuples",
    "what",
    "which",
    "whether",
    "with",
];

/// Words of four or more letters from the user instructions.
fn prompt_keywords(system_text: &str) -> Vec<String> {
    let instructions = system_text
        .split_once("## Instructions\n")
        .map(|(_, rest)| rest.split("\n\n## ").next().unwrap_or(rest))
        .unwrap_or("");
    let mut out: Vec<String> = words(instructions)
        .filter(|w| w.chars().count() >= 4 && !STOPWORDS.contains(&w.as_str()))
        .collect();
    out.dedup();
    out
}

fn tuple_text(t: &DecodedTuple) -> String {
    t.fields
        .iter()
        .filter_map(|(_, v)| v.as_deref())
        .collect::<Vec<_>>()
        .join(" ")
}

fn match_count(t: &DecodedTuple, keywords: &[String]) -> usize {
    let tokens: Vec<String> = words(&tuple_text(t)).collect();
    keywords
        .iter()
        .filter(|k| tokens.iter().any(|w| w.starts_with(k.as_str())))
        .count()
}

fn contract_tag(text: &str) -> Option<&str> {
    let at = text.rfind("Contract: ")?;
    let tag = &text[at + 10..];
    Some(
        tag.split(|c: char| !(c.is_ascii_uppercase() || c == '_'))
            .next()
            .unwrap_or(""),
    )
}

fn summarize(t: &DecodedTuple) -> String {
    let text = tuple_text(t);
    let short: String = text.chars().take(60).collect();
    format!("Summary: {short}")
}

/// Contract-aware answer. Values depend only on tuple content and the
/// instructions, never on batch position.
fn auto_response(req: &ChatRequest) -> String {
    let full = format!("{}\n{}", req.system_text, req.user_text);
    let Some(tag) = contract_tag(&full) else {
        return req.user_text.clone();
    };
    let keywords = prompt_keywords(&req.system_text);
    let (_, tuples) = decode_any(&req.user_text);
    let per_tuple = |f: &dyn Fn(&DecodedTuple) -> Json| {
        let answers: Vec<Json> = tuples
            .iter()
            .map(|t| json!({"id": t.id, "value": f(t)}))
            .collect();
        json!({ "answers": answers }).to_string()
    };
    match tag {
        "BOOL_PER_TUPLE" => {
            per_tuple(&|t| Json::Bool(keywords.is_empty() || match_count(t, &keywords) > 0))
        }
        "TEXT_PER_TUPLE" => per_tuple(&|t| Json::String(summarize(t))),
        "JSON_PER_TUPLE" => per_tuple(&|t| {
            let mut kw: Vec<String> = Vec::new();
            for w in words(&tuple_text(t)).filter(|w| w.chars().count() >= 4) {
                if !kw.contains(&w) {
                    kw.push(w);
                }
                if kw.len() == 3 {
                    break;
                }
            }
            json!({"keywords": kw, "matches": match_count(t, &keywords)})
        }),
        "SINGLE_TEXT" => {
            let parts: Vec<String> = tuples
                .iter()
                .map(|t| tuple_text(t).chars().take(40).collect())
                .collect();
            json!({"answer": format!("Combined summary of {} items: {}", tuples.len(), parts.join("; "))})
                .to_string()
        }
        "SINGLE_JSON" => {
            let firsts: Vec<Json> = tuples
                .iter()
                .map(|t| json!(t.fields.first().and_then(|(_, v)| v.clone())))
                .collect();
            json!({"answer": {"count": tuples.len(), "items": firsts}}).to_string()
        }
        "RANKING" => {
            let mut ids: Vec<(usize, usize)> = tuples
                .iter()
                .map(|t| (t.id, match_count(t, &keywords)))
                .collect();
            ids.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let ranking: Vec<usize> = ids.into_iter().map(|(id, _)| id).collect();
            json!({ "ranking": ranking }).to_string()
        }
        _ => req.user_text.clone(),
    }
}
