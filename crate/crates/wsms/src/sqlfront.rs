//! SQL-like front end: scanner, recursive-descent parser, canonical renderer
//! and name validation against a catalog.
//!
//! Dialect: single-block `SELECT <attrs|*> FROM <cap> (, <cap>)*
//! [WHERE <pred> (AND <pred>)*]`. Predicates are `attr comp literal` or
//! `attr comp attr`. No aliases, nesting or OR.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::catalog::{compose, map_services, select_service, Catalog, CatalogError, ServiceGraph};
use crate::relation::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Keyword,
    Identifier,
    Number,
    Str,
    Comparator,
    Comma,
    Star,
    LParen,
    RParen,
    Dot,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    pub position: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Comparator {
    Eq,
    Lt,
    Gt,
    Le,
    Ge,
    Ne,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Eq => "=",
            Comparator::Lt => "<",
            Comparator::Gt => ">",
            Comparator::Le => "<=",
            Comparator::Ge => ">=",
            Comparator::Ne => "<>",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        Some(match s {
            "=" => Comparator::Eq,
            "<" => Comparator::Lt,
            ">" => Comparator::Gt,
            "<=" => Comparator::Le,
            ">=" => Comparator::Ge,
            "<>" => Comparator::Ne,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Operand {
    Attr(String),
    Literal(Value),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Predicate {
    pub lhs: String,
    pub op: Comparator,
    pub rhs: Operand,
}

impl Predicate {
    /// Attributes the predicate reads.
    pub fn attrs(&self) -> BTreeSet<String> {
        let mut s = BTreeSet::new();
        s.insert(self.lhs.clone());
        if let Operand::Attr(a) = &self.rhs {
            s.insert(a.clone());
        }
        s
    }

    /// Equi-join condition between two distinct attributes.
    pub fn is_join_condition(&self) -> bool {
        matches!(&self.rhs, Operand::Attr(a) if self.op == Comparator::Eq && *a != self.lhs)
    }

    /// Evaluate against one tuple, looking attributes up through `lookup`.
    /// Comparing an integer with a string is an error, not a coercion.
    pub fn eval<'a, F>(&self, lookup: F) -> Result<bool, PredicateEvalError>
    where
        F: Fn(&str) -> Option<&'a Value>,
    {
        let lhs = lookup(&self.lhs)
            .ok_or_else(|| PredicateEvalError::UnknownAttribute(self.lhs.clone()))?;
        let rhs = match &self.rhs {
            Operand::Attr(a) => {
                lookup(a).ok_or_else(|| PredicateEvalError::UnknownAttribute(a.clone()))?
            }
            Operand::Literal(v) => v,
        };
        let ord = match (lhs, rhs) {
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Str(a), Value::Str(b)) => a.cmp(b),
            _ => {
                return Err(PredicateEvalError::TypeMismatch {
                    attr: self.lhs.clone(),
                })
            }
        };
        Ok(match self.op {
            Comparator::Eq => ord.is_eq(),
            Comparator::Lt => ord.is_lt(),
            Comparator::Gt => ord.is_gt(),
            Comparator::Le => ord.is_le(),
            Comparator::Ge => ord.is_ge(),
            Comparator::Ne => ord.is_ne(),
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PredicateEvalError {
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("type mismatch comparing attribute {attr:?}: integer vs string")]
    TypeMismatch { attr: String },
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.rhs {
            Operand::Attr(a) => write!(f, "{}{}{}", self.lhs, self.op.symbol(), a),
            Operand::Literal(Value::Int(i)) => write!(f, "{}{}{}", self.lhs, self.op.symbol(), i),
            Operand::Literal(Value::Str(s)) => {
                write!(f, "{}{}'{}'", self.lhs, self.op.symbol(), s)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Projection {
    Star,
    Attrs(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryAst {
    pub projection: Projection,
    pub sources: Vec<String>,
    pub predicates: Vec<Predicate>,
}

#[derive(Debug, Error)]
pub enum FrontError {
    #[error("lexical error at byte {position}: {message}")]
    Lex { position: usize, message: String },
    #[error("syntax error at byte {position}: found {found}, expected {expected}")]
    Syntax { position: usize, found: String, expected: String },
    #[error("unknown capability {0:?}")]
    UnknownCapability(String),
    #[error("unknown attribute {0:?}: not produced by any selected service")]
    UnknownAttribute(String),
    #[error("ambiguous attribute {attr:?}: produced by services {first:?} and {second:?}")]
    AmbiguousAttribute { attr: String, first: String, second: String },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

// ---------------------------------------------------------------------------
// Scanner

const KEYWORDS: [&str; 4] = ["SELECT", "FROM", "WHERE", "AND"];

pub fn tokenize(text: &str) -> Result<Vec<Token>, FrontError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let token = match c {
            ',' => {
                i += 1;
                Token { kind: TokenKind::Comma, text: ",".into(), position: start }
            }
            '*' => {
                i += 1;
                Token { kind: TokenKind::Star, text: "*".into(), position: start }
            }
            '(' => {
                i += 1;
                Token { kind: TokenKind::LParen, text: "(".into(), position: start }
            }
            ')' => {
                i += 1;
                Token { kind: TokenKind::RParen, text: ")".into(), position: start }
            }
            '.' => {
                i += 1;
                Token { kind: TokenKind::Dot, text: ".".into(), position: start }
            }
            '=' => {
                i += 1;
                Token { kind: TokenKind::Comparator, text: "=".into(), position: start }
            }
            '<' => {
                i += 1;
                let text = match bytes.get(i).map(|&b| b as char) {
                    Some('=') => {
                        i += 1;
                        "<="
                    }
                    Some('>') => {
                        i += 1;
                        "<>"
                    }
                    _ => "<",
                };
                Token { kind: TokenKind::Comparator, text: text.into(), position: start }
            }
            '>' => {
                i += 1;
                let text = if bytes.get(i) == Some(&b'=') {
                    i += 1;
                    ">="
                } else {
                    ">"
                };
                Token { kind: TokenKind::Comparator, text: text.into(), position: start }
            }
            '\'' => {
                i += 1;
                let from = i;
                while i < bytes.len() && bytes[i] != b'\'' {
                    i += 1;
                }
                if i >= bytes.len() {
                    return Err(FrontError::Lex {
                        position: start,
                        message: "unterminated string literal".into(),
                    });
                }
                let text = text[from..i].to_string();
                i += 1; // closing quote
                Token { kind: TokenKind::Str, text, position: start }
            }
            '0'..='9' => {
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                Token { kind: TokenKind::Number, text: text[start..i].into(), position: start }
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                let word = &text[start..i];
                let upper = word.to_ascii_uppercase();
                if KEYWORDS.contains(&upper.as_str()) {
                    Token { kind: TokenKind::Keyword, text: upper, position: start }
                } else {
                    Token { kind: TokenKind::Identifier, text: word.into(), position: start }
                }
            }
            other => {
                return Err(FrontError::Lex {
                    position: start,
                    message: format!("illegal character {other:?}"),
                })
            }
        };
        tokens.push(token);
    }
    Ok(tokens)
}

// ---------------------------------------------------------------------------
// Parser

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn err(&self, expected: &str) -> FrontError {
        match self.peek() {
            Some(t) => FrontError::Syntax {
                position: t.position,
                found: format!("{:?}", t.text),
                expected: expected.into(),
            },
            None => FrontError::Syntax {
                position: self.end,
                found: "end of input".into(),
                expected: expected.into(),
            },
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), FrontError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Keyword && t.text == kw => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(kw)),
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(t) if t.kind == TokenKind::Keyword && t.text == kw)
    }

    fn ident(&mut self) -> Result<String, FrontError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier => {
                self.pos += 1;
                Ok(t.text.clone())
            }
            _ => Err(self.err("identifier")),
        }
    }

    fn comma(&mut self) -> bool {
        if matches!(self.peek(), Some(t) if t.kind == TokenKind::Comma) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn predicate(&mut self) -> Result<Predicate, FrontError> {
        let lhs = self.ident()?;
        let op = match self.peek() {
            Some(t) if t.kind == TokenKind::Comparator => {
                self.pos += 1;
                Comparator::from_symbol(&t.text).expect("scanner produced valid comparator")
            }
            _ => return Err(self.err("comparator")),
        };
        let rhs = match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier => {
                self.pos += 1;
                Operand::Attr(t.text.clone())
            }
            Some(t) if t.kind == TokenKind::Number => {
                self.pos += 1;
                Operand::Literal(Value::Int(t.text.parse().map_err(|_| FrontError::Lex {
                    position: t.position,
                    message: format!("integer literal {:?} out of range", t.text),
                })?))
            }
            Some(t) if t.kind == TokenKind::Str => {
                self.pos += 1;
                Operand::Literal(Value::Str(t.text.clone()))
            }
            _ => return Err(self.err("identifier, number or string")),
        };
        Ok(Predicate { lhs, op, rhs })
    }
}

pub fn parse(tokens: &[Token]) -> Result<QueryAst, FrontError> {
    let end = tokens
        .last()
        .map(|t| t.position + t.text.len())
        .unwrap_or(0);
    let mut p = Parser { tokens, pos: 0, end };
    p.keyword("SELECT")?;
    let projection = if matches!(p.peek(), Some(t) if t.kind == TokenKind::Star) {
        p.pos += 1;
        Projection::Star
    } else {
        let mut attrs = vec![p.ident()?];
        while p.comma() {
            attrs.push(p.ident()?);
        }
        Projection::Attrs(attrs)
    };
    p.keyword("FROM")?;
    let mut sources = vec![p.ident()?];
    while p.comma() {
        sources.push(p.ident()?);
    }
    let mut predicates = Vec::new();
    if p.at_keyword("WHERE") {
        p.pos += 1;
        predicates.push(p.predicate()?);
        while p.at_keyword("AND") {
            p.pos += 1;
            predicates.push(p.predicate()?);
        }
    }
    if let Some(t) = p.peek() {
        return Err(FrontError::Syntax {
            position: t.position,
            found: format!("{:?}", t.text),
            expected: "end of query".into(),
        });
    }
    Ok(QueryAst { projection, sources, predicates })
}

pub fn parse_query(text: &str) -> Result<QueryAst, FrontError> {
    parse(&tokenize(text)?)
}

/// Canonical text form; `parse(tokenize(render(ast)))` is structurally `ast`.
pub fn render(ast: &QueryAst) -> String {
    let proj = match &ast.projection {
        Projection::Star => "*".to_string(),
        Projection::Attrs(attrs) => attrs.join(", "),
    };
    let mut out = format!("SELECT {proj} FROM {}", ast.sources.join(", "));
    if !ast.predicates.is_empty() {
        let preds: Vec<String> = ast
            .predicates
            .iter()
            .map(|p| {
                let rhs = match &p.rhs {
                    Operand::Attr(a) => a.clone(),
                    Operand::Literal(Value::Int(i)) => i.to_string(),
                    Operand::Literal(Value::Str(s)) => format!("'{s}'"),
                };
                format!("{} {} {}", p.lhs, p.op.symbol(), rhs)
            })
            .collect();
        out.push_str(" WHERE ");
        out.push_str(&preds.join(" AND "));
    }
    out
}

// ---------------------------------------------------------------------------
// Validation

/// The query bound to concrete services: one chosen provider per source
/// capability, and a unique producer per referenced attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedQuery {
    pub ast: QueryAst,
    /// capability -> chosen service id.
    pub bindings: BTreeMap<String, String>,
    /// output attribute -> producing service id, over the selected services.
    pub producers: BTreeMap<String, String>,
}

impl ValidatedQuery {
    pub fn selected_ids(&self) -> BTreeSet<String> {
        self.bindings.values().cloned().collect()
    }

    /// Final projection, with `*` resolved to all producible attributes in
    /// lexicographic order.
    pub fn projection_attrs(&self) -> Vec<String> {
        match &self.ast.projection {
            Projection::Star => self.producers.keys().cloned().collect(),
            Projection::Attrs(attrs) => attrs.clone(),
        }
    }

    pub fn service_graph(&self, cat: &Catalog) -> Result<ServiceGraph, CatalogError> {
        compose(&self.selected_ids(), cat)
    }
}

pub fn validate_query(ast: &QueryAst, cat: &Catalog) -> Result<ValidatedQuery, FrontError> {
    let caps: BTreeSet<String> = ast.sources.iter().cloned().collect();
    let candidates = map_services(cat, &caps);
    let mut bindings = BTreeMap::new();
    for (cap, cands) in &candidates {
        if cands.is_empty() {
            return Err(FrontError::UnknownCapability(cap.clone()));
        }
        bindings.insert(cap.clone(), select_service(cap, cands)?.id.clone());
    }
    let selected: BTreeSet<&String> = bindings.values().collect();
    let mut producers: BTreeMap<String, String> = BTreeMap::new();
    for id in &selected {
        for attr in &cat.services[*id].output_attrs {
            if let Some(prev) = producers.insert(attr.clone(), (*id).clone()) {
                let (first, second) = if prev < **id {
                    (prev, (*id).clone())
                } else {
                    ((*id).clone(), prev)
                };
                return Err(FrontError::AmbiguousAttribute { attr: attr.clone(), first, second });
            }
        }
    }
    // Every consumed input must be producible by another selected service.
    for id in &selected {
        for attr in &cat.services[*id].input_attrs {
            match producers.get(attr) {
                Some(p) if p != *id => {}
                _ => return Err(FrontError::UnknownAttribute(attr.clone())),
            }
        }
    }
    let mut referenced: Vec<&String> = Vec::new();
    if let Projection::Attrs(attrs) = &ast.projection {
        referenced.extend(attrs.iter());
    }
    for p in &ast.predicates {
        referenced.push(&p.lhs);
        if let Operand::Attr(a) = &p.rhs {
            referenced.push(a);
        }
    }
    for attr in referenced {
        if !producers.contains_key(attr) {
            return Err(FrontError::UnknownAttribute(attr.clone()));
        }
    }
    Ok(ValidatedQuery { ast: ast.clone(), bindings, producers })
}
