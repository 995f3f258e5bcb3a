use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::PromptError;

const PLACEHOLDERS: [&str; 3] = ["user_prompt", "tuples", "contract"];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(&'static str),
}

/// User-supplied replacement for the meta-prompt. Supports the placeholders
/// `{{user_prompt}}`, `{{tuples}}` and `{{contract}}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaPromptTemplate {
    source: String,
    pieces: Vec<Piece>,
}

impl MetaPromptTemplate {
    pub fn parse(source: &str) -> Result<Self, PromptError> {
        let mut pieces = Vec::new();
        let mut rest = source;
        let mut offset = 0;
        while let Some(open) = rest.find("{{") {
            if open > 0 {
                pieces.push(Piece::Text(rest[..open].to_string()));
            }
            let after = &rest[open + 2..];
            let close = after
                .find("}}")
                .ok_or(PromptError::UnterminatedPlaceholder(offset + open))?;
            let name = after[..close].trim();
            let slot = PLACEHOLDERS
                .iter()
                .find(|p| **p == name)
                .ok_or_else(|| PromptError::UnknownPlaceholder(name.to_string()))?;
            pieces.push(Piece::Slot(slot));
            let consumed = open + 2 + close + 2;
            offset += consumed;
            rest = &rest[consumed..];
        }
        if !rest.is_empty() {
            pieces.push(Piece::Text(rest.to_string()));
        }
        Ok(MetaPromptTemplate {
            source: source.to_string(),
            pieces,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Returns `(static_prefix, dynamic_suffix)`. The split happens at the
    /// first `{{tuples}}`; without one the tuples form the whole suffix.
    pub fn render(&self, user_prompt: &str, contract: &str, tuples: &str) -> (String, String) {
        let mut prefix = String::new();
        let mut suffix = String::new();
        let mut seen_tuples = false;
        for piece in &self.pieces {
            let target = if seen_tuples {
                &mut suffix
            } else {
                &mut prefix
            };
            match piece {
                Piece::Text(t) => target.push_str(t),
                Piece::Slot("user_prompt") => target.push_str(user_prompt),
                Piece::Slot("contract") => target.push_str(contract),
                Piece::Slot(_) => {
                    seen_tuples = true;
                    suffix.push_str(tuples);
                }
            }
        }
        if !seen_tuples {
            suffix.push_str(tuples);
        }
        (prefix, suffix)
    }
}
