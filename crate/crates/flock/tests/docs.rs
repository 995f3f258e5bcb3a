//! Keeps the frozen examples in docs/meta-prompt.md in sync with the code.

use flock_core::functions::SemanticFunction;
use flock_core::prompt::{preview_meta_prompt, serialize_tuples, SerializationFormat, Tuple};
use flock_core::Value;

const DOC: &str = include_str!("../../../docs/meta-prompt.md");

/// Body of the fenced block that follows `<!-- snapshot: name -->`.
fn snapshot(name: &str) -> String {
    let marker = format!("<!-- snapshot: {name} -->");
    let start = DOC
        .find(&marker)
        .unwrap_or_else(|| panic!("no snapshot {name}"));
    let rest = &DOC[start + marker.len()..];
    let open = rest.find("```").expect("fence opens");
    let body = &rest[open..];
    let body = &body[body.find('\n').expect("fence line") + 1..];
    let close = body.find("\n```").expect("fence closes");
    body[..close].to_string()
}

fn sample_rows() -> Vec<Tuple> {
    vec![
        Tuple::new(vec![
            ("title".into(), Value::Text("Free Join".into())),
            ("year".into(), Value::Int(2023)),
        ]),
        Tuple::new(vec![
            (
                "title".into(),
                Value::Text("Joins <fast> & \"robust\"".into()),
            ),
            ("year".into(), Value::Null),
        ]),
    ]
}

#[test]
fn default_meta_prompt_matches_the_doc() {
    let f = SemanticFunction::Filter;
    let text = preview_meta_prompt(
        f,
        "is related to join algos given abstract",
        &["title", "abstract"],
        SerializationFormat::Xml,
        &f.contract(),
        None,
    );
    assert_eq!(snapshot("filter-xml"), text);
}

#[test]
fn serialized_tuples_match_the_doc() {
    for (name, format) in [
        ("tuples-xml", SerializationFormat::Xml),
        ("tuples-json", SerializationFormat::Json),
        ("tuples-markdown", SerializationFormat::Markdown),
    ] {
        let text = serialize_tuples(&sample_rows(), format).unwrap();
        assert_eq!(snapshot(name), text, "{name}");
    }
}

#[test]
fn contract_lines_match_the_doc() {
    let text: Vec<String> = SemanticFunction::ALL
        .iter()
        .filter(|f| f.takes_prompt())
        .map(|f| {
            format!(
                "{}: {}",
                f.name(),
                f.contract().instructions().replace('\n', " ")
            )
        })
        .collect();
    assert_eq!(snapshot("contracts"), text.join("\n"));
}
