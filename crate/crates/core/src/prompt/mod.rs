//! Meta-prompt construction.
//!
//! A rendered prompt is split in two: a static prefix that depends only on
//! the function, the user prompt, the tuple schema, the serialization format
//! and the output contract, and a dynamic suffix carrying the serialized
//! tuple batch. Keeping the prefix byte-stable across batches lets inference
//! servers reuse their KV cache.

mod serialize;
mod template;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::functions::SemanticFunction;
use crate::value::{canonical_json, Value};

pub use serialize::{decode_tuples, serialize_tuples, BatchSizer, DecodedTuple};
pub use template::MetaPromptTemplate;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("tuples in a batch must share the same columns")]
    HeterogeneousRows,
    #[error("unknown template placeholder '{{{{{0}}}}}'")]
    UnknownPlaceholder(String),
    #[error("unterminated template placeholder at byte {0}")]
    UnterminatedPlaceholder(usize),
    #[error("malformed {format} batch: {message}")]
    Malformed {
        format: SerializationFormat,
        message: String,
    },
}

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum SerializationFormat {
    #[default]
    #[serde(rename = "XML")]
    Xml,
    #[serde(rename = "JSON")]
    Json,
    #[serde(rename = "MARKDOWN", alias = "Markdown", alias = "markdown")]
    Markdown,
}

impl fmt::Display for SerializationFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SerializationFormat::Xml => "XML",
            SerializationFormat::Json => "JSON",
            SerializationFormat::Markdown => "MARKDOWN",
        })
    }
}

impl FromStr for SerializationFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "XML" => Ok(SerializationFormat::Xml),
            "JSON" => Ok(SerializationFormat::Json),
            "MARKDOWN" | "MD" => Ok(SerializationFormat::Markdown),
            _ => Err(alloc::format!("unknown serialization format '{s}'")),
        }
    }
}

/// One input tuple: labelled values in the order the query listed them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Tuple {
    pub fields: Vec<(String, Value)>,
}

impl Tuple {
    pub fn new(fields: Vec<(String, Value)>) -> Self {
        Tuple { fields }
    }

    pub fn get(&self, label: &str) -> Option<&Value> {
        self.fields.iter().find(|(k, _)| k == label).map(|(_, v)| v)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|(k, _)| k.as_str())
    }

    pub fn is_all_null(&self) -> bool {
        self.fields.iter().all(|(_, v)| v.is_null())
    }

    /// Order-insensitive, type-preserving text form used for dedup and
    /// cache identity.
    pub fn canonical(&self) -> String {
        let mut entries: Vec<&(String, Value)> = self.fields.iter().collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let mut out = String::from("{");
        for (i, (k, v)) in entries.into_iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&serde_json::to_string(k).unwrap_or_default());
            out.push(':');
            let tagged = serde_json::to_value(v).unwrap_or(serde_json::Value::Null);
            out.push_str(&canonical_json(&tagged));
        }
        out.push('}');
        out
    }

    /// Labels sorted, for schema comparison.
    pub fn key_set(&self) -> Vec<&str> {
        let mut keys: Vec<&str> = self.labels().collect();
        keys.sort_unstable();
        keys
    }
}

/// `ceil(chars / 4)`.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OutputKind {
    TextPerTuple,
    JsonPerTuple,
    BoolPerTuple,
    SingleText,
    SingleJson,
    Ranking,
}

impl OutputKind {
    pub fn is_per_tuple(self) -> bool {
        matches!(
            self,
            OutputKind::TextPerTuple | OutputKind::JsonPerTuple | OutputKind::BoolPerTuple
        )
    }

    pub fn tag(self) -> &'static str {
        match self {
            OutputKind::TextPerTuple => "TEXT_PER_TUPLE",
            OutputKind::JsonPerTuple => "JSON_PER_TUPLE",
            OutputKind::BoolPerTuple => "BOOL_PER_TUPLE",
            OutputKind::SingleText => "SINGLE_TEXT",
            OutputKind::SingleJson => "SINGLE_JSON",
            OutputKind::Ranking => "RANKING",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OutputContract {
    pub kind: OutputKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_hint: Option<String>,
}

impl OutputContract {
    pub fn new(kind: OutputKind) -> Self {
        OutputContract {
            kind,
            schema_hint: None,
        }
    }

    /// Response instructions placed in the prompt. The final `Contract:` line
    /// is machine-readable.
    pub fn instructions(&self) -> String {
        let body = match self.kind {
            OutputKind::TextPerTuple => {
                "Return only a JSON object of the form {\"answers\": [{\"id\": <tuple id>, \"value\": <string>}, ...]} with exactly one entry for every tuple id. Each value is the text answer for that tuple."
            }
            OutputKind::JsonPerTuple => {
                "Return only a JSON object of the form {\"answers\": [{\"id\": <tuple id>, \"value\": <JSON value>}, ...]} with exactly one entry for every tuple id. Each value is a JSON value answering the instructions for that tuple."
            }
            OutputKind::BoolPerTuple => {
                "Return only a JSON object of the form {\"answers\": [{\"id\": <tuple id>, \"value\": <true or false>}, ...]} with exactly one entry for every tuple id. Each value is true when the tuple satisfies the instructions and false otherwise."
            }
            OutputKind::SingleText => {
                "Return only a JSON object of the form {\"answer\": <string>} holding one text answer that covers all tuples."
            }
            OutputKind::SingleJson => {
                "Return only a JSON object of the form {\"answer\": <JSON value>} holding one JSON value that covers all tuples."
            }
            OutputKind::Ranking => {
                "Return only a JSON object of the form {\"ranking\": [<tuple id>, ...]} listing every tuple id exactly once, most relevant first."
            }
        };
        let mut out = String::from(body);
        if let Some(hint) = &self.schema_hint {
            out.push_str("\nValues must follow this JSON schema: ");
            out.push_str(hint);
        }
        out.push_str("\nContract: ");
        out.push_str(self.kind.tag());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub static_prefix: String,
    pub dynamic_suffix: String,
    pub estimated_tokens: usize,
}

impl RenderedPrompt {
    pub fn full_text(&self) -> String {
        let mut s = self.static_prefix.clone();
        s.push_str("\n\n");
        s.push_str(&self.dynamic_suffix);
        s
    }
}

fn task_description(function: SemanticFunction) -> &'static str {
    use SemanticFunction::*;
    match function {
        Complete => "Apply the user instructions to every input tuple independently and write a text answer for each tuple.",
        CompleteJson => "Apply the user instructions to every input tuple independently and produce a JSON value for each tuple.",
        Filter => "Decide for every input tuple independently whether it satisfies the user instructions.",
        Embedding => "Embed the input text.",
        Reduce => "Combine all input tuples into a single text answer following the user instructions.",
        ReduceJson => "Combine all input tuples into a single JSON value following the user instructions.",
        Rerank | First | Last => "Rank the input tuples from most to least relevant with respect to the user instructions.",
    }
}

fn format_documentation(format: SerializationFormat, labels: &[&str]) -> String {
    let cols = labels.join(", ");
    match format {
        SerializationFormat::Xml => alloc::format!(
            "Tuples are serialized as XML. Each tuple is a <tuple id=\"N\"> element with one child element per column ({cols}). The characters &, <, >, \" and ' are escaped as XML entities; a NULL value is an empty element with the attribute null=\"true\"."
        ),
        SerializationFormat::Json => alloc::format!(
            "Tuples are serialized as a JSON array. Each object carries the tuple id under \"_id\" and one key per column ({cols}); NULL values are JSON null."
        ),
        SerializationFormat::Markdown => alloc::format!(
            "Tuples are serialized as a Markdown table whose first column \"id\" holds the tuple id, followed by the columns {cols}. Inside cells \\, |, \" and line breaks are backslash-escaped, an empty string is written \"\" and an empty cell is NULL."
        ),
    }
}

/// The batch-independent part of the meta-prompt.
pub fn static_prefix(
    function: SemanticFunction,
    user_prompt: &str,
    labels: &[&str],
    format: SerializationFormat,
    contract: &OutputContract,
) -> String {
    alloc::format!(
        "You are a semantic operator inside a SQL query engine.\n\n## Task\n{}\n\n## Instructions\n{}\n\n## Input format\n{}\n\n## Response format\n{}",
        task_description(function),
        user_prompt,
        format_documentation(format, labels),
        contract.instructions()
    )
}

/// Renders the meta-prompt for one batch of tuples. With a template the
/// static prefix is the template text before `{{tuples}}`.
pub fn build_meta_prompt(
    function: SemanticFunction,
    user_prompt: &str,
    rows: &[Tuple],
    format: SerializationFormat,
    contract: &OutputContract,
    template: Option<&MetaPromptTemplate>,
) -> Result<RenderedPrompt, PromptError> {
    let serialized = serialize_tuples(rows, format)?;
    let labels: Vec<&str> = rows
        .first()
        .map(|r| r.labels().collect())
        .unwrap_or_default();
    let (static_prefix, dynamic_suffix) = match template {
        None => (
            static_prefix(function, user_prompt, &labels, format, contract),
            serialized,
        ),
        Some(t) => t.render(user_prompt, &contract.instructions(), &serialized),
    };
    let mut rendered = RenderedPrompt {
        static_prefix,
        dynamic_suffix,
        estimated_tokens: 0,
    };
    rendered.estimated_tokens = estimate_tokens(&rendered.full_text());
    Ok(rendered)
}

/// Prefix with a placeholder in place of the tuples, for plan previews.
pub fn preview_meta_prompt(
    function: SemanticFunction,
    user_prompt: &str,
    labels: &[&str],
    format: SerializationFormat,
    contract: &OutputContract,
    template: Option<&MetaPromptTemplate>,
) -> String {
    const PLACEHOLDER: &str = "<tuples serialized at run time>";
    match template {
        None => {
            let mut s = static_prefix(function, user_prompt, labels, format, contract);
            s.push_str("\n\n");
            s.push_str(PLACEHOLDER);
            s
        }
        Some(t) => {
            let (a, b) = t.render(user_prompt, &contract.instructions(), PLACEHOLDER);
            let mut s = a;
            s.push_str("\n\n");
            s.push_str(&b);
            s
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn row(title: &str, abs: &str) -> Tuple {
        Tuple::new(vec![
            ("title".into(), Value::Text(title.into())),
            ("abstract".into(), Value::Text(abs.into())),
        ])
    }

    #[test]
    fn token_estimate_is_ceil_quarter_chars() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcdefgh"), 2);
        assert_eq!(estimate_tokens("abcdefghi"), 3);
        assert_eq!(estimate_tokens("éééé"), 1);
    }

    #[test]
    fn prompt_is_verbatim_in_prefix_and_rows_in_suffix() {
        let rows = vec![row("a", "x"), row("b", "y"), row("c", "z")];
        let contract = OutputContract::new(OutputKind::TextPerTuple);
        let p = build_meta_prompt(
            SemanticFunction::Complete,
            "Summarize the abstract in 1 sentence",
            &rows,
            SerializationFormat::Xml,
            &contract,
            None,
        )
        .unwrap();
        assert!(p
            .static_prefix
            .contains("Summarize the abstract in 1 sentence"));
        assert_eq!(p.dynamic_suffix.matches("<tuple id=").count(), 3);
        assert_eq!(p.estimated_tokens, estimate_tokens(&p.full_text()));
    }

    #[test]
    fn prefix_is_batch_independent() {
        let contract = OutputContract::new(OutputKind::TextPerTuple);
        let three: Vec<Tuple> = (0..3).map(|i| row(&i.to_string(), "a")).collect();
        let seven: Vec<Tuple> = (0..7).map(|i| row("other", &i.to_string())).collect();
        let build = |rows: &[Tuple]| {
            build_meta_prompt(
                SemanticFunction::Complete,
                "p",
                rows,
                SerializationFormat::Markdown,
                &contract,
                None,
            )
            .unwrap()
            .static_prefix
        };
        assert_eq!(build(&three), build(&seven));
    }

    #[test]
    fn filter_contract_asks_for_booleans() {
        let contract = OutputContract::new(OutputKind::BoolPerTuple);
        let prefix = static_prefix(
            SemanticFunction::Filter,
            "is related to join algos given abstract",
            &["title", "abstract"],
            SerializationFormat::Xml,
            &contract,
        );
        assert!(prefix.contains("<true or false>"));
        assert!(prefix.contains("every tuple id"));
        assert!(prefix.ends_with("Contract: BOOL_PER_TUPLE"));
    }

    #[test]
    fn canonical_form_ignores_key_order_but_not_types() {
        let a = Tuple::new(vec![
            ("x".into(), Value::Int(1)),
            ("y".into(), Value::Text("1".into())),
        ]);
        let b = Tuple::new(vec![
            ("y".into(), Value::Text("1".into())),
            ("x".into(), Value::Int(1)),
        ]);
        let c = Tuple::new(vec![
            ("y".into(), Value::Int(1)),
            ("x".into(), Value::Int(1)),
        ]);
        assert_eq!(a.canonical(), b.canonical());
        assert_ne!(a.canonical(), c.canonical());
    }

    #[test]
    fn template_override_substitutes_placeholders() {
        let t =
            MetaPromptTemplate::parse("Do: {{user_prompt}}\n{{contract}}\nData:\n{{tuples}}\nEnd.")
                .unwrap();
        let rows = vec![row("a", "b")];
        let p = build_meta_prompt(
            SemanticFunction::Complete,
            "summarize",
            &rows,
            SerializationFormat::Json,
            &OutputContract::new(OutputKind::TextPerTuple),
            Some(&t),
        )
        .unwrap();
        assert!(p.static_prefix.starts_with("Do: summarize\n"));
        assert!(p.static_prefix.ends_with("Data:\n"));
        assert!(p.dynamic_suffix.starts_with("[{\"_id\":0"));
        assert!(p.dynamic_suffix.ends_with("\nEnd."));
    }
}
