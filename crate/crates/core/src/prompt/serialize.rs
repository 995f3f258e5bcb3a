//! Tuple batch serialization in XML, JSON and Markdown, plus the inverse
//! decoders used by the mock provider and tests.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{PromptError, SerializationFormat, Tuple};
use crate::value::{canonical_json, format_double, Value};

fn check_schema(rows: &[Tuple]) -> Result<Vec<&str>, PromptError> {
    let Some(first) = rows.first() else {
        return Ok(Vec::new());
    };
    let keys = first.key_set();
    if rows
        .iter()
        .any(|r| r.key_set() != keys || r.fields.len() != first.fields.len())
    {
        return Err(PromptError::HeterogeneousRows);
    }
    Ok(first.labels().collect())
}

fn xml_escape(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
}

fn md_escape(s: &str, out: &mut String) {
    if s.is_empty() {
        out.push_str("\"\"");
        return;
    }
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '|' => out.push_str("\\|"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
}

fn json_value(v: &Value) -> String {
    match v {
        Value::Null => "null".to_string(),
        Value::Bool(b) => b.to_string(),
        Value::Int(i) => i.to_string(),
        Value::Double(d) if d.is_finite() => format_double(*d),
        Value::Double(_) => "null".to_string(),
        Value::Text(s) => serde_json::to_string(s).unwrap_or_default(),
        Value::Json(j) => canonical_json(j),
        Value::DoubleArray(_) => v.render(),
    }
}

fn prologue(format: SerializationFormat, labels: &[&str]) -> String {
    match format {
        SerializationFormat::Xml => String::new(),
        SerializationFormat::Json => "[".to_string(),
        SerializationFormat::Markdown => {
            let mut s = String::from("| id |");
            for l in labels {
                s.push(' ');
                md_escape(l, &mut s);
                s.push_str(" |");
            }
            s.push_str("\n|---|");
            for _ in labels {
                s.push_str("---|");
            }
            s
        }
    }
}

fn epilogue(format: SerializationFormat) -> &'static str {
    match format {
        SerializationFormat::Json => "]",
        _ => "",
    }
}

fn joiner(format: SerializationFormat, index: usize) -> &'static str {
    match (format, index) {
        (SerializationFormat::Markdown, _) => "\n",
        (_, 0) => "",
        (SerializationFormat::Xml, _) => "\n",
        (SerializationFormat::Json, _) => ",",
    }
}

fn segment(format: SerializationFormat, labels: &[&str], id: usize, row: &Tuple) -> String {
    let mut s = String::new();
    match format {
        SerializationFormat::Xml => {
            s.push_str(&alloc::format!("<tuple id=\"{id}\">"));
            for l in labels {
                let v = row.get(l).unwrap_or(&Value::Null);
                if v.is_null() {
                    s.push_str(&alloc::format!("<{l} null=\"true\"/>"));
                } else {
                    s.push_str(&alloc::format!("<{l}>"));
                    xml_escape(&v.render(), &mut s);
                    s.push_str(&alloc::format!("</{l}>"));
                }
            }
            s.push_str("</tuple>");
        }
        SerializationFormat::Json => {
            s.push_str(&alloc::format!("{{\"_id\":{id}"));
            for l in labels {
                let v = row.get(l).unwrap_or(&Value::Null);
                s.push(',');
                s.push_str(&serde_json::to_string(l).unwrap_or_default());
                s.push(':');
                s.push_str(&json_value(v));
            }
            s.push('}');
        }
        SerializationFormat::Markdown => {
            s.push_str(&alloc::format!("| {id} |"));
            for l in labels {
                let v = row.get(l).unwrap_or(&Value::Null);
                if v.is_null() {
                    s.push_str("  |");
                } else {
                    s.push(' ');
                    md_escape(&v.render(), &mut s);
                    s.push_str(" |");
                }
            }
        }
    }
    s
}

/// Serializes a batch with 0-based batch-local ids.
pub fn serialize_tuples(
    rows: &[Tuple],
    format: SerializationFormat,
) -> Result<String, PromptError> {
    let labels = check_schema(rows)?;
    let mut out = prologue(format, &labels);
    for (i, row) in rows.iter().enumerate() {
        out.push_str(joiner(format, i));
        out.push_str(&segment(format, &labels, i, row));
    }
    out.push_str(epilogue(format));
    Ok(out)
}

/// Tracks the character length of a growing batch without re-serializing it.
/// Rows must share the schema of the labels it was created with.
#[derive(Debug, Clone)]
pub struct BatchSizer {
    format: SerializationFormat,
    labels: Vec<String>,
    body_chars: usize,
    fixed_chars: usize,
    count: usize,
}

impl BatchSizer {
    pub fn new(format: SerializationFormat, labels: &[&str]) -> Self {
        let fixed_chars =
            prologue(format, labels).chars().count() + epilogue(format).chars().count();
        BatchSizer {
            format,
            labels: labels.iter().map(|s| s.to_string()).collect(),
            body_chars: 0,
            fixed_chars,
            count: 0,
        }
    }

    fn row_chars(&self, row: &Tuple) -> usize {
        let labels: Vec<&str> = self.labels.iter().map(String::as_str).collect();
        joiner(self.format, self.count).chars().count()
            + segment(self.format, &labels, self.count, row)
                .chars()
                .count()
    }

    /// Character length of the serialized batch if `row` were appended.
    pub fn chars_with(&self, row: &Tuple) -> usize {
        self.fixed_chars + self.body_chars + self.row_chars(row)
    }

    pub fn push(&mut self, row: &Tuple) {
        self.body_chars += self.row_chars(row);
        self.count += 1;
    }

    pub fn chars(&self) -> usize {
        self.fixed_chars + self.body_chars
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// A tuple read back from a serialized batch. Values are in their rendered
/// text form; `None` is NULL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedTuple {
    pub id: usize,
    pub fields: Vec<(String, Option<String>)>,
}

fn malformed(format: SerializationFormat, message: &str) -> PromptError {
    PromptError::Malformed {
        format,
        message: message.to_string(),
    }
}

/// Decodes every tuple found in `text`. Text before the first tuple and after
/// the last one is ignored.
pub fn decode_tuples(
    text: &str,
    format: SerializationFormat,
) -> Result<Vec<DecodedTuple>, PromptError> {
    match format {
        SerializationFormat::Xml => decode_xml(text),
        SerializationFormat::Json => decode_json(text),
        SerializationFormat::Markdown => decode_markdown(text),
    }
}

fn xml_unescape(s: &str) -> String {
    s.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&apos;", "'")
        .replace("&amp;", "&")
}

fn decode_xml(text: &str) -> Result<Vec<DecodedTuple>, PromptError> {
    let fmt = SerializationFormat::Xml;
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("<tuple id=\"") {
        rest = &rest[start + 11..];
        let q = rest
            .find('"')
            .ok_or_else(|| malformed(fmt, "unterminated id"))?;
        let id: usize = rest[..q].parse().map_err(|_| malformed(fmt, "bad id"))?;
        rest = rest[q..]
            .strip_prefix("\">")
            .ok_or_else(|| malformed(fmt, "bad tuple tag"))?;
        let end = rest
            .find("</tuple>")
            .ok_or_else(|| malformed(fmt, "unterminated tuple"))?;
        let mut body = &rest[..end];
        rest = &rest[end + 8..];
        let mut fields = Vec::new();
        while !body.is_empty() {
            let b = body
                .strip_prefix('<')
                .ok_or_else(|| malformed(fmt, "expected element"))?;
            let name_end = b
                .find(['>', ' '])
                .ok_or_else(|| malformed(fmt, "unterminated element"))?;
            let name = &b[..name_end];
            if let Some(after) = b[name_end..].strip_prefix(" null=\"true\"/>") {
                fields.push((name.to_string(), None));
                body = after;
                continue;
            }
            let inner = b[name_end..]
                .strip_prefix('>')
                .ok_or_else(|| malformed(fmt, "bad element"))?;
            let close = alloc::format!("</{name}>");
            let close_at = inner
                .find(&close)
                .ok_or_else(|| malformed(fmt, "unclosed element"))?;
            fields.push((name.to_string(), Some(xml_unescape(&inner[..close_at]))));
            body = &inner[close_at + close.len()..];
        }
        out.push(DecodedTuple { id, fields });
    }
    Ok(out)
}

fn decode_json(text: &str) -> Result<Vec<DecodedTuple>, PromptError> {
    let fmt = SerializationFormat::Json;
    let Some(start) = text.find('[') else {
        return Ok(Vec::new());
    };
    let mut stream =
        serde_json::Deserializer::from_str(&text[start..]).into_iter::<serde_json::Value>();
    let value = stream
        .next()
        .ok_or_else(|| malformed(fmt, "missing array"))?
        .map_err(|_| malformed(fmt, "invalid JSON"))?;
    let items = value
        .as_array()
        .ok_or_else(|| malformed(fmt, "expected array"))?;
    let mut out = Vec::new();
    for item in items {
        let obj = item
            .as_object()
            .ok_or_else(|| malformed(fmt, "expected object"))?;
        let id = obj
            .get("_id")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| malformed(fmt, "missing _id"))? as usize;
        let fields = obj
            .iter()
            .filter(|(k, _)| k.as_str() != "_id")
            .map(|(k, v)| {
                let val = match v {
                    serde_json::Value::Null => None,
                    serde_json::Value::String(s) => Some(s.clone()),
                    other => Some(canonical_json(other)),
                };
                (k.clone(), val)
            })
            .collect();
        out.push(DecodedTuple { id, fields });
    }
    Ok(out)
}

fn split_md_row(line: &str) -> Vec<String> {
    let inner = line.strip_prefix('|').unwrap_or(line);
    let mut cells = Vec::new();
    let mut cur = String::new();
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => {
                cur.push('\\');
                if let Some(n) = chars.next() {
                    cur.push(n);
                }
            }
            '|' => cells.push(core::mem::take(&mut cur)),
            c => cur.push(c),
        }
    }
    cells
}

fn md_cell(raw: &str) -> Option<String> {
    let raw = raw.strip_prefix(' ').unwrap_or(raw);
    let raw = raw.strip_suffix(' ').unwrap_or(raw);
    if raw.is_empty() {
        return None;
    }
    if raw == "\"\"" {
        return Some(String::new());
    }
    let mut out = String::new();
    let mut chars = raw.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('r') => out.push('\r'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    Some(out)
}

fn decode_markdown(text: &str) -> Result<Vec<DecodedTuple>, PromptError> {
    let fmt = SerializationFormat::Markdown;
    let mut lines = text.lines().skip_while(|l| !l.starts_with("| id |"));
    let Some(header) = lines.next() else {
        return Ok(Vec::new());
    };
    let labels: Vec<String> = split_md_row(header)
        .iter()
        .skip(1)
        .map(|c| md_cell(c).unwrap_or_default())
        .collect();
    match lines.next() {
        Some(l) if l.starts_with("|---|") => {}
        _ => return Err(malformed(fmt, "missing separator row")),
    }
    let mut out = Vec::new();
    for line in lines {
        if !line.starts_with('|') {
            break;
        }
        let cells = split_md_row(line);
        if cells.len() != labels.len() + 1 {
            return Err(malformed(fmt, "row width does not match header"));
        }
        let id: usize = md_cell(&cells[0])
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed(fmt, "bad id cell"))?;
        let fields = labels
            .iter()
            .cloned()
            .zip(cells[1..].iter().map(|c| md_cell(c)))
            .collect();
        out.push(DecodedTuple { id, fields });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn row(title: &str, abs: &str) -> Tuple {
        Tuple::new(vec![
            ("title".into(), Value::Text(title.into())),
            ("abstract".into(), Value::Text(abs.into())),
        ])
    }

    #[test]
    fn xml_structure() {
        let s =
            serialize_tuples(&[row("a", "b"), row("c", "d")], SerializationFormat::Xml).unwrap();
        assert_eq!(
            s,
            "<tuple id=\"0\"><title>a</title><abstract>b</abstract></tuple>\n<tuple id=\"1\"><title>c</title><abstract>d</abstract></tuple>"
        );
    }

    #[test]
    fn json_structure() {
        let s = serialize_tuples(&[row("a", "b")], SerializationFormat::Json).unwrap();
        assert_eq!(s, "[{\"_id\":0,\"title\":\"a\",\"abstract\":\"b\"}]");
    }

    #[test]
    fn markdown_structure() {
        let s = serialize_tuples(&[row("a|b", "")], SerializationFormat::Markdown).unwrap();
        assert_eq!(
            s,
            "| id | title | abstract |\n|---|---|---|\n| 0 | a\\|b | \"\" |"
        );
    }

    #[test]
    fn xml_escapes_markup() {
        let s = serialize_tuples(&[row("a<b", "x & y")], SerializationFormat::Xml).unwrap();
        assert!(s.contains("a&lt;b"));
        assert!(s.contains("x &amp; y"));
    }

    #[test]
    fn heterogeneous_rows_are_rejected() {
        let other = Tuple::new(vec![("title".into(), Value::Text("x".into()))]);
        assert_eq!(
            serialize_tuples(&[row("a", "b"), other], SerializationFormat::Json),
            Err(PromptError::HeterogeneousRows)
        );
    }

    #[test]
    fn nulls_are_distinct_from_empty_strings() {
        let with_null = Tuple::new(vec![("t".into(), Value::Null)]);
        let with_empty = Tuple::new(vec![("t".into(), Value::Text(String::new()))]);
        for f in [
            SerializationFormat::Xml,
            SerializationFormat::Json,
            SerializationFormat::Markdown,
        ] {
            assert_ne!(
                serialize_tuples(core::slice::from_ref(&with_null), f).unwrap(),
                serialize_tuples(core::slice::from_ref(&with_empty), f).unwrap()
            );
        }
    }

    #[test]
    fn sizer_matches_serialized_length() {
        for f in [
            SerializationFormat::Xml,
            SerializationFormat::Json,
            SerializationFormat::Markdown,
        ] {
            let rows: Vec<Tuple> = (0..12).map(|i| row(&"é".repeat(i), "a|<b>")).collect();
            let mut sizer = BatchSizer::new(f, &["title", "abstract"]);
            for (i, r) in rows.iter().enumerate() {
                let predicted = sizer.chars_with(r);
                sizer.push(r);
                let actual = serialize_tuples(&rows[..=i], f).unwrap().chars().count();
                assert_eq!(predicted, actual, "{f} at {i}");
            }
        }
    }
}
