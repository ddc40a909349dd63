use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::parse::{is_comparison, parse};
use super::token::{Token, TokenKind};
use super::SqlError;

/// A SQL skeleton: table/column names and values become `*`, comparison
/// operators become `<op>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SqlTemplate {
    pub text: String,
    pub keyword_multiset: BTreeMap<String, usize>,
}

impl std::fmt::Display for SqlTemplate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Piece {
    Word,
    Function,
    Open,
    Close,
    Comma,
}

pub fn extract_template(sql: &str) -> Result<SqlTemplate, SqlError> {
    let query = parse(sql)?;
    let tokens = &query.tokens;

    let mut pieces: Vec<(Piece, String)> = Vec::with_capacity(tokens.len());
    let mut keyword_multiset = BTreeMap::new();
    let mut i = 0;
    while i < tokens.len() {
        let t = &tokens[i];
        let next = tokens.get(i + 1);
        match t.kind {
            TokenKind::Keyword if next.is_some_and(|n| n.is_symbol("(")) && is_function_keyword(t) => {
                pieces.push((Piece::Function, t.norm.clone()));
            }
            TokenKind::Keyword if t.norm == "LIKE" => pieces.push((Piece::Word, "<op>".into())),
            TokenKind::Keyword => {
                *keyword_multiset.entry(t.norm.clone()).or_insert(0) += 1;
                pieces.push((Piece::Word, t.norm.clone()));
            }
            TokenKind::Ident if next.is_some_and(|n| n.is_symbol("(")) => {
                pieces.push((Piece::Function, t.text.to_ascii_uppercase()));
            }
            TokenKind::Ident => {
                i = skip_qualified(tokens, i);
                pieces.push((Piece::Word, "*".into()));
            }
            TokenKind::Number | TokenKind::String | TokenKind::Blob | TokenKind::Param => {
                pieces.push((Piece::Word, "*".into()));
            }
            TokenKind::Symbol => match t.text.as_str() {
                ";" => {}
                "(" => pieces.push((Piece::Open, "(".into())),
                ")" => pieces.push((Piece::Close, ")".into())),
                "," => pieces.push((Piece::Comma, ",".into())),
                _ if is_comparison(t) => pieces.push((Piece::Word, "<op>".into())),
                other => pieces.push((Piece::Word, other.to_string())),
            },
        }
        i += 1;
    }

    let mut text = String::with_capacity(sql.len());
    let mut prev: Option<Piece> = None;
    for (kind, s) in &pieces {
        let space = match (prev, kind) {
            (None, _) => false,
            (_, Piece::Close | Piece::Comma) => false,
            (Some(Piece::Open), _) => false,
            (Some(Piece::Function), Piece::Open) => false,
            _ => true,
        };
        if space {
            text.push(' ');
        }
        text.push_str(s);
        prev = Some(*kind);
    }
    Ok(SqlTemplate {
        text,
        keyword_multiset,
    })
}

/// `REPLACE(...)`, `LIKE(...)` and friends are function calls, not clauses.
fn is_function_keyword(t: &Token) -> bool {
    matches!(t.norm.as_str(), "REPLACE" | "LIKE" | "GLOB" | "MATCH" | "REGEXP")
}

/// Index of the last token of a dotted name starting at `i`.
fn skip_qualified(tokens: &[Token], mut i: usize) -> usize {
    while tokens.get(i + 1).is_some_and(|t| t.is_symbol("."))
        && tokens
            .get(i + 2)
            .is_some_and(|t| t.kind == TokenKind::Ident || t.is_symbol("*"))
    {
        i += 2;
    }
    i
}
