//! Recursive-descent parser for the supported SQL subset and the resource DDL.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::ast::*;
use super::token::{is_reserved, tokenize, Token, TokenKind};
use super::SyntaxError;
use crate::catalog::{ResourceKind, Scope};
use crate::value::DataType;

/// Parses exactly one statement (an optional trailing `;` is allowed).
pub fn parse(sql: &str) -> Result<Statement, SyntaxError> {
    let tokens = tokenize(sql)?;
    let mut p = Parser::new(&tokens, sql);
    if p.at_end() {
        return Err(p.error_here(
            "expected a statement",
            Some("SELECT, WITH, CREATE, UPDATE, DELETE or ASK"),
        ));
    }
    let stmt = p.statement()?;
    p.eat_punct(";");
    if !p.at_end() {
        return Err(p.error_here("unexpected input after statement", Some("end of input")));
    }
    Ok(stmt)
}

/// Parses a script. Statements are separated by `;`, which may be omitted
/// between DDL statements that are complete on their own.
pub fn parse_script(sql: &str) -> Result<Vec<Statement>, SyntaxError> {
    let tokens = tokenize(sql)?;
    let mut p = Parser::new(&tokens, sql);
    let mut out = Vec::new();
    loop {
        while p.eat_punct(";") {}
        if p.at_end() {
            break;
        }
        out.push(p.statement()?);
        if p.eat_punct(";") || p.at_end() {
            continue;
        }
        if !p.at_statement_start() {
            return Err(p.error_here("unexpected input after statement", Some("';'")));
        }
    }
    Ok(out)
}

struct Parser<'t, 'a> {
    tokens: &'t [Token<'a>],
    pos: usize,
    src: &'a str,
}

impl<'t, 'a> Parser<'t, 'a> {
    fn new(tokens: &'t [Token<'a>], src: &'a str) -> Self {
        Parser {
            tokens,
            pos: 0,
            src,
        }
    }

    fn peek(&self) -> Option<&Token<'a>> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, n: usize) -> Option<&Token<'a>> {
        self.tokens.get(self.pos + n)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.tokens.len()
    }

    fn at_statement_start(&self) -> bool {
        self.peek().is_some_and(|t| {
            ["SELECT", "WITH", "CREATE", "UPDATE", "DELETE", "ASK"]
                .iter()
                .any(|k| t.is_keyword(k))
        })
    }

    fn error_here(&self, msg: &str, expected: Option<&str>) -> SyntaxError {
        let (line, column, found) = match self.peek() {
            Some(t) => (t.line, t.column, alloc::format!("'{}'", t.text)),
            None => {
                let line = self.src.matches('\n').count() as u32 + 1;
                let last = self.src.rsplit('\n').next().unwrap_or("");
                (
                    line,
                    last.chars().count() as u32 + 1,
                    "end of input".to_string(),
                )
            }
        };
        SyntaxError::new(
            &alloc::format!("{msg}, found {found}"),
            line,
            column,
            expected.map(String::from),
        )
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        self.peek().is_some_and(|t| t.is_keyword(kw))
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.peek_keyword(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), SyntaxError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(self.error_here(&alloc::format!("expected {kw}"), Some(kw)))
        }
    }

    fn peek_punct(&self, p: &str) -> bool {
        self.peek().is_some_and(|t| t.is_punct(p))
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.peek_punct(p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> Result<(), SyntaxError> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(self.error_here(&alloc::format!("expected '{p}'"), Some(p)))
        }
    }

    fn is_ident_token(t: &Token<'_>) -> bool {
        t.kind == TokenKind::Identifier || (t.kind == TokenKind::Keyword && !is_reserved(t.text))
    }

    fn peek_ident(&self) -> bool {
        self.peek().is_some_and(Self::is_ident_token)
    }

    fn ident(&mut self) -> Result<String, SyntaxError> {
        match self.peek() {
            Some(t) if Self::is_ident_token(t) => {
                let v = t.ident_value();
                self.pos += 1;
                Ok(v)
            }
            _ => Err(self.error_here("expected identifier", Some("identifier"))),
        }
    }

    fn string(&mut self) -> Result<String, SyntaxError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::String => {
                let v = t.string_value();
                self.pos += 1;
                Ok(v)
            }
            _ => Err(self.error_here("expected string literal", Some("string literal"))),
        }
    }

    fn statement(&mut self) -> Result<Statement, SyntaxError> {
        if self.peek_keyword("SELECT") || self.peek_keyword("WITH") {
            return Ok(Statement::Select(self.query()?));
        }
        if self.eat_keyword("CREATE") {
            return self.create();
        }
        if self.eat_keyword("UPDATE") {
            let scope = self.scope();
            if self.eat_keyword("MODEL") {
                return Ok(Statement::UpdateModel(self.model_ddl(scope)?));
            }
            if self.eat_keyword("PROMPT") {
                return Ok(Statement::UpdatePrompt(self.prompt_ddl(scope)?));
            }
            return Err(self.error_here("expected MODEL or PROMPT", Some("MODEL, PROMPT")));
        }
        if self.eat_keyword("DELETE") {
            let scope = self.scope();
            let kind = if self.eat_keyword("MODEL") {
                ResourceKind::Model
            } else if self.eat_keyword("PROMPT") {
                ResourceKind::Prompt
            } else {
                return Err(self.error_here("expected MODEL or PROMPT", Some("MODEL, PROMPT")));
            };
            self.expect_punct("(")?;
            let name = self.string()?;
            self.expect_punct(")")?;
            return Ok(Statement::DeleteResource { kind, scope, name });
        }
        if self.eat_keyword("ASK") {
            let question = self.string()?;
            return Ok(Statement::Ask { question });
        }
        Err(self.error_here(
            "expected a statement",
            Some("SELECT, WITH, CREATE, UPDATE, DELETE or ASK"),
        ))
    }

    fn scope(&mut self) -> Option<Scope> {
        if self.eat_keyword("GLOBAL") {
            Some(Scope::Global)
        } else if self.eat_keyword("LOCAL") {
            Some(Scope::Local)
        } else {
            None
        }
    }

    fn create(&mut self) -> Result<Statement, SyntaxError> {
        let scope = self.scope();
        if self.eat_keyword("MODEL") {
            return Ok(Statement::CreateModel(self.model_ddl(scope)?));
        }
        if self.eat_keyword("PROMPT") {
            return Ok(Statement::CreatePrompt(self.prompt_ddl(scope)?));
        }
        if scope.is_none() && self.eat_keyword("TABLE") {
            let name = self.ident()?;
            self.expect_keyword("AS")?;
            self.expect_keyword("FROM")?;
            let path = self.string()?;
            return Ok(Statement::CreateTableFromFile { name, path });
        }
        if scope.is_none() && self.eat_keyword("FTS") {
            self.expect_keyword("INDEX")?;
            self.expect_keyword("ON")?;
            let table = self.ident()?;
            self.expect_punct("(")?;
            let id_column = self.ident()?;
            self.expect_punct(",")?;
            let text_column = self.ident()?;
            self.expect_punct(")")?;
            return Ok(Statement::CreateFtsIndex {
                table,
                id_column,
                text_column,
            });
        }
        Err(self.error_here(
            "expected MODEL, PROMPT, TABLE or FTS INDEX",
            Some("MODEL, PROMPT, TABLE, FTS"),
        ))
    }

    fn model_ddl(&mut self, scope: Option<Scope>) -> Result<ModelDdl, SyntaxError> {
        self.expect_punct("(")?;
        let name = self.string()?;
        self.expect_punct(",")?;
        let model_id = self.string()?;
        self.expect_punct(",")?;
        let provider = self.string()?;
        let mut options = Vec::new();
        if self.eat_punct(",") {
            self.expect_punct("{")?;
            if !self.peek_punct("}") {
                loop {
                    let key = self.string()?;
                    self.expect_punct(":")?;
                    let lit = self.signed_literal()?;
                    options.push((key, lit));
                    if !self.eat_punct(",") {
                        break;
                    }
                }
            }
            self.expect_punct("}")?;
        }
        self.expect_punct(")")?;
        Ok(ModelDdl {
            scope,
            name,
            model_id,
            provider,
            options,
        })
    }

    fn signed_literal(&mut self) -> Result<Literal, SyntaxError> {
        let neg = self.eat_punct("-");
        let lit = match self.peek() {
            Some(t) if t.kind == TokenKind::Number => {
                let lit = number_literal(t.text);
                self.pos += 1;
                lit
            }
            Some(t) if t.kind == TokenKind::String && !neg => {
                let v = t.string_value();
                self.pos += 1;
                return Ok(Literal::String(v));
            }
            Some(t) if !neg && (t.is_keyword("TRUE") || t.is_keyword("FALSE")) => {
                let b = t.is_keyword("TRUE");
                self.pos += 1;
                return Ok(Literal::Bool(b));
            }
            _ => return Err(self.error_here("expected literal", Some("number, string or boolean"))),
        };
        Ok(match (lit, neg) {
            (Literal::Int(i), true) => Literal::Int(-i),
            (Literal::Double(d), true) => Literal::Double(-d),
            (l, _) => l,
        })
    }

    fn prompt_ddl(&mut self, scope: Option<Scope>) -> Result<PromptDdl, SyntaxError> {
        self.expect_punct("(")?;
        let name = self.string()?;
        self.expect_punct(",")?;
        let text = self.string()?;
        self.expect_punct(")")?;
        Ok(PromptDdl { scope, name, text })
    }

    fn query(&mut self) -> Result<Query, SyntaxError> {
        let mut ctes = Vec::new();
        if self.eat_keyword("WITH") {
            loop {
                let name = self.ident()?;
                self.expect_keyword("AS")?;
                self.expect_punct("(")?;
                let query = self.query()?;
                self.expect_punct(")")?;
                ctes.push(Cte {
                    name,
                    query: Box::new(query),
                });
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        let body = self.select()?;
        Ok(Query { ctes, body })
    }

    fn select(&mut self) -> Result<Select, SyntaxError> {
        self.expect_keyword("SELECT")?;
        let mut projection = Vec::new();
        loop {
            projection.push(self.select_item()?);
            if !self.eat_punct(",") {
                break;
            }
        }
        let from = if self.eat_keyword("FROM") {
            Some(self.table_ref()?)
        } else {
            None
        };
        let selection = if self.eat_keyword("WHERE") {
            Some(self.expr()?)
        } else {
            None
        };
        let mut group_by = Vec::new();
        if self.eat_keyword("GROUP") {
            self.expect_keyword("BY")?;
            loop {
                group_by.push(self.expr()?);
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        let mut order_by = Vec::new();
        if self.eat_keyword("ORDER") {
            self.expect_keyword("BY")?;
            loop {
                let expr = self.expr()?;
                let desc = if self.eat_keyword("DESC") {
                    true
                } else {
                    self.eat_keyword("ASC");
                    false
                };
                order_by.push(OrderItem { expr, desc });
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        let limit = if self.eat_keyword("LIMIT") {
            match self.peek() {
                Some(t) if t.kind == TokenKind::Number => {
                    let n = t.text.parse::<u64>().map_err(|_| {
                        self.error_here("LIMIT expects a non-negative integer", Some("integer"))
                    })?;
                    self.pos += 1;
                    Some(n)
                }
                _ => return Err(self.error_here("expected LIMIT count", Some("integer"))),
            }
        } else {
            None
        };
        Ok(Select {
            projection,
            from,
            selection,
            group_by,
            order_by,
            limit,
        })
    }

    fn select_item(&mut self) -> Result<SelectItem, SyntaxError> {
        if self.eat_punct("*") {
            return Ok(SelectItem::Wildcard);
        }
        if self.peek_ident()
            && self.peek_at(1).is_some_and(|t| t.is_punct("."))
            && self.peek_at(2).is_some_and(|t| t.is_punct("*"))
        {
            let q = self.ident()?;
            self.pos += 2;
            return Ok(SelectItem::QualifiedWildcard(q));
        }
        let expr = self.expr()?;
        let alias = self.alias()?;
        Ok(SelectItem::Expr { expr, alias })
    }

    /// `AS name` or a bare identifier.
    fn alias(&mut self) -> Result<Option<String>, SyntaxError> {
        if self.eat_keyword("AS") || self.peek_ident() {
            Ok(Some(self.ident()?))
        } else {
            Ok(None)
        }
    }

    fn table_factor(&mut self) -> Result<TableRef, SyntaxError> {
        let name = self.ident()?;
        let is_fn = self.peek_punct("(");
        if is_fn {
            self.pos += 1;
            self.expect_punct(")")?;
        }
        let alias = self.alias()?;
        Ok(if is_fn {
            TableRef::Function { name, alias }
        } else {
            TableRef::Named { name, alias }
        })
    }

    fn table_ref(&mut self) -> Result<TableRef, SyntaxError> {
        let mut left = self.table_factor()?;
        loop {
            let kind = if self.eat_keyword("JOIN") {
                JoinKind::Inner
            } else if self.eat_keyword("INNER") {
                self.expect_keyword("JOIN")?;
                JoinKind::Inner
            } else if self.eat_keyword("FULL") {
                self.eat_keyword("OUTER");
                self.expect_keyword("JOIN")?;
                JoinKind::FullOuter
            } else if self.eat_keyword("CROSS") {
                self.expect_keyword("JOIN")?;
                JoinKind::Cross
            } else if self.eat_punct(",") {
                JoinKind::Cross
            } else if self.peek_keyword("LEFT") || self.peek_keyword("RIGHT") {
                return Err(self.error_here(
                    "only INNER, FULL OUTER and CROSS joins are supported",
                    Some("JOIN, INNER JOIN, FULL OUTER JOIN, CROSS JOIN"),
                ));
            } else {
                break;
            };
            let right = self.table_factor()?;
            let on = if kind == JoinKind::Cross {
                None
            } else {
                self.expect_keyword("ON")?;
                Some(self.expr()?)
            };
            left = TableRef::Join {
                left: Box::new(left),
                right: Box::new(right),
                kind,
                on,
            };
        }
        Ok(left)
    }

    fn expr(&mut self) -> Result<Expr, SyntaxError> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr, SyntaxError> {
        let mut left = self.and_expr()?;
        while self.eat_keyword("OR") {
            let right = self.and_expr()?;
            left = binary(BinaryOp::Or, left, right);
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<Expr, SyntaxError> {
        let mut left = self.not_expr()?;
        while self.eat_keyword("AND") {
            let right = self.not_expr()?;
            left = binary(BinaryOp::And, left, right);
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> Result<Expr, SyntaxError> {
        if self.eat_keyword("NOT") {
            let e = self.not_expr()?;
            return Ok(Expr::Unary {
                op: UnaryOp::Not,
                expr: Box::new(e),
            });
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, SyntaxError> {
        let left = self.concat()?;
        if self.eat_keyword("IS") {
            let negated = self.eat_keyword("NOT");
            self.expect_keyword("NULL")?;
            return Ok(Expr::IsNull {
                expr: Box::new(left),
                negated,
            });
        }
        let op = match self.peek() {
            Some(t) if t.kind == TokenKind::Operator => match t.text {
                "=" => Some(BinaryOp::Eq),
                "<>" | "!=" => Some(BinaryOp::NotEq),
                "<" => Some(BinaryOp::Lt),
                "<=" => Some(BinaryOp::LtEq),
                ">" => Some(BinaryOp::Gt),
                ">=" => Some(BinaryOp::GtEq),
                _ => None,
            },
            _ => None,
        };
        match op {
            Some(op) => {
                self.pos += 1;
                let right = self.concat()?;
                Ok(binary(op, left, right))
            }
            None => Ok(left),
        }
    }

    fn concat(&mut self) -> Result<Expr, SyntaxError> {
        let mut left = self.additive()?;
        while self.eat_punct("||") {
            let right = self.additive()?;
            left = binary(BinaryOp::Concat, left, right);
        }
        Ok(left)
    }

    fn additive(&mut self) -> Result<Expr, SyntaxError> {
        let mut left = self.multiplicative()?;
        loop {
            let op = if self.peek_punct("+") {
                BinaryOp::Add
            } else if self.peek_punct("-") {
                BinaryOp::Sub
            } else {
                break;
            };
            self.pos += 1;
            let right = self.multiplicative()?;
            left = binary(op, left, right);
        }
        Ok(left)
    }

    fn multiplicative(&mut self) -> Result<Expr, SyntaxError> {
        let mut left = self.unary()?;
        loop {
            let op = if self.peek_punct("*") {
                BinaryOp::Mul
            } else if self.peek_punct("/") {
                BinaryOp::Div
            } else if self.peek_punct("%") {
                BinaryOp::Mod
            } else {
                break;
            };
            self.pos += 1;
            let right = self.unary()?;
            left = binary(op, left, right);
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<Expr, SyntaxError> {
        if self.eat_punct("-") {
            let e = self.unary()?;
            return Ok(Expr::Unary {
                op: UnaryOp::Neg,
                expr: Box::new(e),
            });
        }
        if self.eat_punct("+") {
            return self.unary();
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Expr, SyntaxError> {
        let mut e = self.primary()?;
        while self.eat_punct("::") {
            let ty = self.type_name()?;
            e = Expr::Cast {
                expr: Box::new(e),
                ty,
            };
        }
        Ok(e)
    }

    fn type_name(&mut self) -> Result<DataType, SyntaxError> {
        let name = match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier || t.kind == TokenKind::Keyword => {
                t.text.to_ascii_uppercase()
            }
            _ => return Err(self.error_here("expected type name", Some("type name"))),
        };
        let base = match name.as_str() {
            "INT" | "INTEGER" | "BIGINT" => DataType::Int,
            "DOUBLE" | "FLOAT" | "REAL" => DataType::Double,
            "TEXT" | "VARCHAR" | "STRING" => DataType::Text,
            "BOOL" | "BOOLEAN" => DataType::Bool,
            "JSON" => DataType::Json,
            _ => {
                return Err(
                    self.error_here("unknown type", Some("INTEGER, DOUBLE, TEXT, BOOLEAN, JSON"))
                )
            }
        };
        self.pos += 1;
        if self.eat_punct("[") {
            if base != DataType::Double {
                return Err(self.error_here("only DOUBLE arrays are supported", Some("DOUBLE[n]")));
            }
            let len = match self.peek() {
                Some(t) if t.kind == TokenKind::Number => {
                    let n = t
                        .text
                        .parse::<usize>()
                        .ok()
                        .filter(|n| *n > 0)
                        .ok_or_else(|| {
                            self.error_here(
                                "array length must be a positive integer",
                                Some("integer"),
                            )
                        })?;
                    self.pos += 1;
                    Some(n)
                }
                _ => None,
            };
            self.expect_punct("]")?;
            return Ok(DataType::DoubleArray(len));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, SyntaxError> {
        let Some(t) = self.peek().cloned() else {
            return Err(self.error_here("expected expression", Some("expression")));
        };
        match t.kind {
            TokenKind::Number => {
                self.pos += 1;
                Ok(Expr::Literal(number_literal(t.text)))
            }
            TokenKind::String => {
                self.pos += 1;
                Ok(Expr::Literal(Literal::String(t.string_value())))
            }
            TokenKind::Keyword if t.is_keyword("NULL") => {
                self.pos += 1;
                Ok(Expr::Literal(Literal::Null))
            }
            TokenKind::Keyword if t.is_keyword("TRUE") || t.is_keyword("FALSE") => {
                self.pos += 1;
                Ok(Expr::Literal(Literal::Bool(t.is_keyword("TRUE"))))
            }
            TokenKind::Punct if t.text == "(" => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            TokenKind::Punct if t.text == "{" => self.map_literal(),
            TokenKind::Operator if t.text == "*" => {
                self.pos += 1;
                Ok(Expr::Star)
            }
            _ if Self::is_ident_token(&t) => self.identifier_expr(),
            _ => Err(self.error_here("expected expression", Some("expression"))),
        }
    }

    fn map_literal(&mut self) -> Result<Expr, SyntaxError> {
        self.expect_punct("{")?;
        let mut entries = Vec::new();
        if !self.peek_punct("}") {
            loop {
                let key = self.string()?;
                self.expect_punct(":")?;
                let value = self.expr()?;
                entries.push((key, value));
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct("}")?;
        Ok(Expr::Map(entries))
    }

    fn identifier_expr(&mut self) -> Result<Expr, SyntaxError> {
        let mut parts = alloc::vec![self.ident()?];
        while self.peek_punct(".") {
            self.pos += 1;
            parts.push(self.ident()?);
        }
        if self.eat_punct("(") {
            let mut args = Vec::new();
            if !self.peek_punct(")") {
                loop {
                    let named =
                        self.peek_ident() && self.peek_at(1).is_some_and(|t| t.is_punct(":="));
                    if named {
                        let n = self.ident()?;
                        self.pos += 1;
                        args.push(FuncArg::Named(n, self.expr()?));
                    } else {
                        args.push(FuncArg::Positional(self.expr()?));
                    }
                    if !self.eat_punct(",") {
                        break;
                    }
                }
            }
            self.expect_punct(")")?;
            let over = if self.eat_keyword("OVER") {
                self.expect_punct("(")?;
                if !self.peek_punct(")") {
                    return Err(self.error_here(
                        "only empty window specifications are supported",
                        Some("')'"),
                    ));
                }
                self.expect_punct(")")?;
                true
            } else {
                false
            };
            return Ok(Expr::Function {
                name: parts,
                args,
                over,
            });
        }
        match parts.len() {
            1 => Ok(Expr::Column {
                qualifier: None,
                name: parts.pop().unwrap(),
            }),
            2 => {
                let name = parts.pop().unwrap();
                Ok(Expr::Column {
                    qualifier: parts.pop(),
                    name,
                })
            }
            _ => Err(self.error_here("column references take at most one qualifier", None)),
        }
    }
}

fn binary(op: BinaryOp, left: Expr, right: Expr) -> Expr {
    Expr::Binary {
        op,
        left: Box::new(left),
        right: Box::new(right),
    }
}

fn number_literal(text: &str) -> Literal {
    if !text.contains(['.', 'e', 'E']) {
        if let Ok(i) = text.parse::<i64>() {
            return Literal::Int(i);
        }
    }
    Literal::Double(text.parse::<f64>().unwrap_or(f64::NAN))
}
