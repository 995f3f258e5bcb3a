//! Natural-language questions to SQL.

use flock_core::catalog::{ModelParams, ModelResource};
use flock_core::functions::reference_card;
use flock_core::sql::{self, Statement};
use flock_core::Table;

use crate::provider::{ChatRequest, Provider, ProviderError};

#[derive(Debug, thiserror::Error)]
pub enum AskError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("no tables are loaded")]
    NoTables,
    #[error("could not generate a valid query: {0}")]
    GenerationFailed(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// `CREATE TABLE` statements describing the loaded tables.
pub fn schema_ddl<'a>(tables: impl IntoIterator<Item = &'a Table>) -> String {
    tables
        .into_iter()
        .map(|t| {
            let cols: Vec<String> = t
                .columns
                .iter()
                .map(|(c, ty)| format!("  {c} {ty}"))
                .collect();
            format!("CREATE TABLE {} (\n{}\n);", t.name, cols.join(",\n"))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn ask_system_prompt(schema: &str, resources: &str) -> String {
    format!(
        "You translate questions about a database into one SQL query for a semantic SQL engine.\n\n\
         ## Tables\n{schema}\n\n\
         ## Functions\n{}\n\
         ## Catalog resources\n{}\n\n\
         ## Response\nReturn only the SQL SELECT statement, without explanation. \
         String literals use single quotes. Pass models as {{'model': '<id>'}} or \
         {{'model_name': '<name>'}} and prompts as {{'prompt': '<text>'}} or {{'prompt_name': '<name>'}}.",
        reference_card(),
        if resources.is_empty() { "(none)" } else { resources }
    )
}

/// Takes the SQL out of a model answer: code fences, a leading `SQL:` label
/// and a trailing semicolon are dropped.
pub fn extract_sql(answer: &str) -> String {
    let mut t = answer.trim();
    if let Some(start) = t.find("```") {
        let rest = &t[start + 3..];
        let rest = rest
            .strip_prefix("sql")
            .or_else(|| rest.strip_prefix("SQL"))
            .unwrap_or(rest);
        t = rest.split("```").next().unwrap_or(rest);
    }
    let t = t.trim();
    let t = t.strip_prefix("SQL:").unwrap_or(t).trim();
    t.trim_end_matches(';').trim().to_string()
}

/// Checks that `sql` is a single SELECT.
pub fn parse_select(sql: &str) -> Result<(), String> {
    match sql::parse(sql) {
        Ok(Statement::Select(_)) => Ok(()),
        Ok(_) => Err("the answer is not a SELECT statement".into()),
        Err(e) => Err(e.to_string()),
    }
}

/// Asks the model for SQL answering `question`. An answer that fails
/// `validate` is retried once with the error appended.
pub fn generate_ask_sql(
    question: &str,
    tables: &[&Table],
    resources: &str,
    model: &ModelResource,
    provider: &dyn Provider,
    validate: impl Fn(&str) -> Result<(), String>,
) -> Result<String, AskError> {
    let question = question.trim();
    if question.is_empty() {
        return Err(AskError::EmptyQuestion);
    }
    if tables.is_empty() {
        return Err(AskError::NoTables);
    }
    let system_text = ask_system_prompt(&schema_ddl(tables.iter().copied()), resources);
    let mut user_text = format!("Question: {question}");
    let mut last_error = String::new();
    for _ in 0..2 {
        let req = ChatRequest {
            model_id: model.model_id.clone(),
            system_text: system_text.clone(),
            user_text: user_text.clone(),
            params: ModelParams {
                temperature: Some(0.0),
                ..model.params.clone()
            },
            json_mode: false,
            tuple_count: 0,
        };
        let answer = provider.chat(&req)?.text;
        let sql = extract_sql(&answer);
        match validate(&sql) {
            Ok(()) => return Ok(sql),
            Err(e) => {
                user_text = format!(
                    "Question: {question}\n\nYour previous answer was rejected.\nAnswer:\n{sql}\nError: {e}\nReturn a corrected query."
                );
                last_error = e;
            }
        }
    }
    Err(AskError::GenerationFailed(last_error))
}
