//! SQL-side analysis: tokenizing, parsing, templates, hardness buckets,
//! literal substitution and schema linearization.

mod hardness;
mod parse;
mod schema;
mod template;
pub mod token;
mod values;

pub use hardness::{classify_hardness, ComponentCounts, Hardness, HardnessRules, RuleError};
pub use parse::{
    parse, ClauseKind, ClauseSpan, ColumnRef, Condition, Connector, Expr, FromClause, OrderItem,
    Predicate, PredicateOp, Query, Select, SetOp, TableSource,
};
pub use schema::linearize_schema;
pub use template::{extract_template, SqlTemplate};
pub use values::{literals, substitute_values, Substitution};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SqlError {
    #[error("empty SQL")]
    Empty,
    #[error("unterminated {what} starting at byte {offset}")]
    Unterminated { offset: usize, what: &'static str },
    #[error("unexpected character {ch:?} at byte {offset}")]
    UnexpectedChar { offset: usize, ch: char },
    #[error("expected {expected}, found {found:?} at byte {offset}")]
    Unexpected {
        offset: usize,
        found: String,
        expected: &'static str,
    },
    #[error("expected {expected}, found end of input")]
    UnexpectedEnd { expected: &'static str },
    #[error("unexpected trailing input {found:?} at byte {offset}")]
    TrailingInput { offset: usize, found: String },
    #[error("{what} are not supported (byte {offset})")]
    Unsupported { offset: usize, what: &'static str },
    #[error("nesting deeper than {limit} levels")]
    TooDeep { limit: usize },
}

/// Whitespace-collapsed, keyword-uppercased SQL. Never reorders or merges
/// tokens; SQL the tokenizer rejects is only whitespace-collapsed.
pub fn normalize_sql(sql: &str) -> String {
    let Ok(tokens) = token::tokenize(sql) else {
        return sql.split_whitespace().collect::<Vec<_>>().join(" ");
    };
    let mut out = String::with_capacity(sql.len());
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 && t.space_before {
            out.push(' ');
        }
        out.push_str(&t.norm);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_collapses_and_uppercases() {
        assert_eq!(
            normalize_sql("select  name\n from singer where name = 'A  b'"),
            "SELECT name FROM singer WHERE name = 'A  b'"
        );
        assert_eq!(normalize_sql("SELECT a=1"), "SELECT a=1");
        assert_ne!(normalize_sql("SELECT a=1"), normalize_sql("SELECT a = 1"));
    }

    #[test]
    fn normalize_falls_back_on_bad_sql() {
        assert_eq!(normalize_sql("select   'oops"), "select 'oops");
    }
}
