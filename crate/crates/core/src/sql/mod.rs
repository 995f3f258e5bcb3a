//! SQL frontend: lexer, parser and syntax tree.

pub mod ast;
mod parser;
pub mod token;

use alloc::string::String;
use core::fmt;

pub use ast::Statement;
pub use parser::{parse, parse_script};

/// Parse failure with a 1-based source position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxError {
    pub message: String,
    pub line: u32,
    pub column: u32,
    pub expected: Option<String>,
}

impl SyntaxError {
    pub fn new(message: &str, line: u32, column: u32, expected: Option<String>) -> Self {
        SyntaxError {
            message: String::from(message),
            line,
            column,
            expected,
        }
    }
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "syntax error at line {}, column {}: {}",
            self.line, self.column, self.message
        )?;
        if let Some(exp) = &self.expected {
            write!(f, " (expected {exp})")?;
        }
        Ok(())
    }
}

impl core::error::Error for SyntaxError {}

#[cfg(test)]
mod tests {
    use super::ast::*;
    use super::*;
    use crate::catalog::Scope;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn parses_global_model_ddl() {
        let stmt =
            parse("CREATE GLOBAL MODEL('model-relevance-check', 'gpt-4o-mini', 'openai')").unwrap();
        assert_eq!(
            stmt,
            Statement::CreateModel(ModelDdl {
                scope: Some(Scope::Global),
                name: "model-relevance-check".into(),
                model_id: "gpt-4o-mini".into(),
                provider: "openai".into(),
                options: vec![],
            })
        );
    }

    #[test]
    fn script_without_semicolons() {
        let stmts = parse_script(
            "-- models\nCREATE GLOBAL MODEL('m', 'gpt-4o-mini', 'openai')\n-- prompts\nCREATE PROMPT('joins-prompt', 'is related to join algos given abstract')",
        )
        .unwrap();
        assert_eq!(stmts.len(), 2);
        assert!(matches!(&stmts[1], Statement::CreatePrompt(p) if p.scope.is_none()));
    }

    #[test]
    fn unbalanced_paren_reports_position() {
        let err = parse("SELECT * FROM t WHERE (").unwrap_err();
        assert_eq!(err.line, 1);
        assert_eq!(err.column, 24);
        assert!(err.to_string().contains("end of input"));
    }

    #[test]
    fn left_join_is_rejected_not_read_as_alias() {
        let err = parse("SELECT * FROM t1 LEFT JOIN t2 ON t1.a = t2.a").unwrap_err();
        assert_eq!(err.column, 18);
        assert!(err.to_string().contains("FULL OUTER"));
    }

    #[test]
    fn cast_binds_tighter_than_division() {
        let stmt = parse("SELECT a.s::DOUBLE / (MAX(a.s) OVER ()) FROM a").unwrap();
        let Statement::Select(q) = stmt else { panic!() };
        let SelectItem::Expr { expr, .. } = &q.body.projection[0] else {
            panic!()
        };
        let Expr::Binary { op, left, right } = expr else {
            panic!()
        };
        assert_eq!(*op, BinaryOp::Div);
        assert!(matches!(**left, Expr::Cast { .. }));
        assert!(matches!(**right, Expr::Function { over: true, .. }));
    }

    #[test]
    fn map_with_embedded_braces_in_string() {
        let stmt = parse(
            "SELECT llm_complete_json({'model': 'gpt-4o'}, {'prompt': 'as JSON: { \"k\": <v> }'}, {'t': x}) FROM t",
        )
        .unwrap();
        let Statement::Select(q) = stmt else { panic!() };
        let SelectItem::Expr { expr, .. } = &q.body.projection[0] else {
            panic!()
        };
        let Expr::Function { args, .. } = expr else {
            panic!()
        };
        assert_eq!(args.len(), 3);
        let FuncArg::Positional(Expr::Map(entries)) = &args[1] else {
            panic!()
        };
        assert_eq!(
            entries[0].1,
            Expr::Literal(Literal::String("as JSON: { \"k\": <v> }".into()))
        );
    }

    #[test]
    fn window_must_be_empty() {
        assert!(parse("SELECT MAX(x) OVER (PARTITION BY y) FROM t").is_err());
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        assert!(parse("SELECT 1 FROM t t2 t3").is_err());
        assert!(parse("").is_err());
    }
}
