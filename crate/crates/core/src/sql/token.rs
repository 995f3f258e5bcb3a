//! Lexer. Tokens borrow their text from the input; whitespace and comments
//! are skipped but stay recoverable from token spans.

use alloc::string::String;
use alloc::vec::Vec;

use super::SyntaxError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Keyword,
    Identifier,
    String,
    Number,
    Operator,
    Punct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token<'a> {
    pub kind: TokenKind,
    pub text: &'a str,
    /// Byte offset of `text` in the input.
    pub offset: usize,
    pub line: u32,
    pub column: u32,
}

impl Token<'_> {
    pub fn is_keyword(&self, kw: &str) -> bool {
        self.kind == TokenKind::Keyword && self.text.eq_ignore_ascii_case(kw)
    }

    pub fn is_punct(&self, p: &str) -> bool {
        matches!(self.kind, TokenKind::Punct | TokenKind::Operator) && self.text == p
    }

    /// Decoded string literal body (`''` unescaped).
    pub fn string_value(&self) -> String {
        let inner = &self.text[1..self.text.len() - 1];
        inner.replace("''", "'")
    }

    /// Identifier text with double quotes removed.
    pub fn ident_value(&self) -> String {
        if self.text.starts_with('"') {
            self.text[1..self.text.len() - 1].replace("\"\"", "\"")
        } else {
            String::from(self.text)
        }
    }
}

/// Words that can never be used as bare identifiers.
pub const RESERVED: &[&str] = &[
    "SELECT", "FROM", "WHERE", "WITH", "AS", "JOIN", "INNER", "FULL", "OUTER", "CROSS", "ON",
    "GROUP", "BY", "ORDER", "ASC", "DESC", "LIMIT", "AND", "OR", "NOT", "NULL", "TRUE", "FALSE",
    "IS", "OVER", "CREATE", "UPDATE", "DELETE", "LEFT", "RIGHT",
];

/// Words with statement-level meaning that remain usable as identifiers.
pub const CONTEXTUAL: &[&str] = &[
    "GLOBAL", "LOCAL", "MODEL", "PROMPT", "TABLE", "FTS", "INDEX", "ASK",
];

fn is_keyword(word: &str) -> bool {
    RESERVED
        .iter()
        .chain(CONTEXTUAL.iter())
        .any(|k| k.eq_ignore_ascii_case(word))
}

pub fn is_reserved(word: &str) -> bool {
    RESERVED.iter().any(|k| k.eq_ignore_ascii_case(word))
}

pub fn tokenize(input: &str) -> Result<Vec<Token<'_>>, SyntaxError> {
    let bytes = input.as_bytes();
    let mut tokens = Vec::new();
    let mut pos = 0usize;
    let mut line = 1u32;
    let mut line_start = 0usize;

    let column_of = |pos: usize, line_start: usize| -> u32 {
        input[line_start..pos].chars().count() as u32 + 1
    };

    while pos < bytes.len() {
        let c = bytes[pos];
        let start = pos;
        let (tok_line, tok_col) = (line, column_of(pos, line_start));
        let err = |msg: &str| SyntaxError::new(msg, tok_line, tok_col, None);

        if c == b'\n' {
            pos += 1;
            line += 1;
            line_start = pos;
            continue;
        }
        if c.is_ascii_whitespace() {
            pos += 1;
            continue;
        }
        if c == b'-' && bytes.get(pos + 1) == Some(&b'-') {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        if c == b'/' && bytes.get(pos + 1) == Some(&b'*') {
            pos += 2;
            loop {
                if pos + 1 >= bytes.len() {
                    return Err(err("unterminated block comment"));
                }
                if bytes[pos] == b'\n' {
                    line += 1;
                    line_start = pos + 1;
                }
                if bytes[pos] == b'*' && bytes[pos + 1] == b'/' {
                    pos += 2;
                    break;
                }
                pos += 1;
            }
            continue;
        }

        let kind = if c == b'\'' || c == b'"' {
            let quote = c;
            pos += 1;
            loop {
                if pos >= bytes.len() {
                    return Err(err(if quote == b'\'' {
                        "unterminated string literal"
                    } else {
                        "unterminated quoted identifier"
                    }));
                }
                if bytes[pos] == quote {
                    if bytes.get(pos + 1) == Some(&quote) {
                        pos += 2;
                        continue;
                    }
                    pos += 1;
                    break;
                }
                if bytes[pos] == b'\n' {
                    line += 1;
                    line_start = pos + 1;
                }
                pos += 1;
            }
            if quote == b'\'' {
                TokenKind::String
            } else {
                TokenKind::Identifier
            }
        } else if c.is_ascii_digit()
            || (c == b'.' && bytes.get(pos + 1).is_some_and(|b| b.is_ascii_digit()))
        {
            while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                pos += 1;
            }
            if pos < bytes.len()
                && bytes[pos] == b'.'
                && bytes.get(pos + 1).is_some_and(|b| b.is_ascii_digit())
            {
                pos += 1;
                while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                    pos += 1;
                }
            }
            if pos < bytes.len() && (bytes[pos] == b'e' || bytes[pos] == b'E') {
                let mut look = pos + 1;
                if look < bytes.len() && (bytes[look] == b'+' || bytes[look] == b'-') {
                    look += 1;
                }
                if look < bytes.len() && bytes[look].is_ascii_digit() {
                    pos = look;
                    while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                        pos += 1;
                    }
                }
            }
            TokenKind::Number
        } else if c.is_ascii_alphabetic() || c == b'_' || c >= 0x80 {
            while pos < bytes.len() {
                let b = bytes[pos];
                if b.is_ascii_alphanumeric() || b == b'_' || b >= 0x80 {
                    pos += 1;
                } else {
                    break;
                }
            }
            if is_keyword(&input[start..pos]) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            }
        } else {
            let two = input.get(pos..pos + 2).unwrap_or("");
            let op_len = match two {
                "<>" | "!=" | "<=" | ">=" | "||" | "::" | ":=" => 2,
                _ => 0,
            };
            if op_len == 2 {
                pos += 2;
                TokenKind::Operator
            } else {
                pos += 1;
                match c {
                    b'=' | b'<' | b'>' | b'+' | b'-' | b'*' | b'/' | b'%' => TokenKind::Operator,
                    b'(' | b')' | b',' | b'{' | b'}' | b'[' | b']' | b':' | b';' | b'.' => {
                        TokenKind::Punct
                    }
                    _ => {
                        let ch = input[start..].chars().next().unwrap_or('?');
                        return Err(err(&alloc::format!("unexpected character '{ch}'")));
                    }
                }
            }
        };
        tokens.push(Token {
            kind,
            text: &input[start..pos],
            offset: start,
            line: tok_line,
            column: tok_col,
        });
    }
    Ok(tokens)
}
