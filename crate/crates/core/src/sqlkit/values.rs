use std::ops::Range;

use serde::Serialize;

use super::parse::parse;
use super::token::{Token, TokenKind};
use super::SqlError;

/// Outcome of positional literal substitution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Substitution {
    pub sql: String,
    pub replaced: usize,
    pub pred_literals: usize,
    pub gold_literals: usize,
}

impl Substitution {
    pub fn count_mismatch(&self) -> bool {
        self.pred_literals != self.gold_literals
    }
}

/// Literal spans in token order. A unary minus directly in front of a number
/// belongs to the literal.
pub fn literals(tokens: &[Token]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        if !t.is_literal() {
            continue;
        }
        let mut span = t.span.clone();
        if t.kind == TokenKind::Number && i > 0 && tokens[i - 1].is_symbol("-") {
            let unary = i == 1
                || (matches!(tokens[i - 2].kind, TokenKind::Keyword | TokenKind::Symbol)
                    && !tokens[i - 2].is_symbol(")"));
            if unary {
                span.start = tokens[i - 1].span.start;
            }
        }
        out.push(span);
    }
    out
}

/// Replaces the i-th literal of `pred_sql` with the i-th literal of
/// `gold_sql`. Surplus literals in the prediction are kept as they are.
pub fn substitute_values(pred_sql: &str, gold_sql: &str) -> Result<Substitution, SqlError> {
    let pred = parse(pred_sql)?;
    let gold = parse(gold_sql)?;
    let pred_lits = literals(&pred.tokens);
    let gold_lits = literals(&gold.tokens);

    let mut sql = String::with_capacity(pred_sql.len());
    let mut cursor = 0;
    let mut replaced = 0;
    for (p, g) in pred_lits.iter().zip(gold_lits.iter()) {
        sql.push_str(&pred_sql[cursor..p.start]);
        let gold_text = &gold_sql[g.clone()];
        if gold_text != &pred_sql[p.clone()] {
            replaced += 1;
        }
        sql.push_str(gold_text);
        cursor = p.end;
    }
    sql.push_str(&pred_sql[cursor..]);

    Ok(Substitution {
        sql,
        replaced,
        pred_literals: pred_lits.len(),
        gold_literals: gold_lits.len(),
    })
}
