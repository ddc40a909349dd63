//! Recursive-descent parser for the SELECT subset of SQLite used by
//! text-to-SQL corpora.
//!
//! The tree is deliberately shallow: expressions are kept as source spans plus
//! the facts downstream code needs (aggregate calls, column references, nested
//! queries). Clause spans are recorded so callers can splice clauses between
//! queries without re-rendering.

use std::ops::Range;

use super::token::{tokenize, Token, TokenKind};
use super::SqlError;

const MAX_DEPTH: usize = 64;

const AGGREGATES: &[&str] = &["avg", "count", "max", "min", "sum", "total", "group_concat"];

/// Keywords SQLite accepts as identifiers when they cannot be read otherwise.
const FALLBACK_IDENTS: &[&str] = &[
    "ABORT", "ACTION", "AFTER", "ANALYZE", "ASC", "ATTACH", "BEFORE", "BEGIN", "CASCADE",
    "CONFLICT", "DATABASE", "DEFERRED", "DESC", "DETACH", "EACH", "FAIL", "FIRST", "FOLLOWING",
    "FOR", "GLOB", "IGNORE", "IMMEDIATE", "INITIALLY", "INSTEAD", "KEY", "LAST", "LIKE", "MATCH",
    "NO", "OF", "OFFSET", "PLAN", "PRAGMA", "PRECEDING", "QUERY", "RAISE", "RECURSIVE",
    "REGEXP", "RELEASE", "REPLACE", "RESTRICT", "ROW", "ROWS", "SAVEPOINT", "TEMP", "TEMPORARY",
    "TRIGGER", "VACUUM", "VIEW", "VIRTUAL", "WITHOUT",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetOp {
    Union,
    UnionAll,
    Intersect,
    Except,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connector {
    And,
    Or,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredicateOp {
    Compare,
    Like,
    Glob,
    Regexp,
    Match,
    In,
    Between,
    Is,
    IsNull,
    NotNull,
    Exists,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnRef {
    pub qualifier: Option<String>,
    pub name: String,
}

/// An expression, summarised.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Expr {
    pub span: Range<usize>,
    /// Aggregate calls at this query level.
    pub aggregates: usize,
    pub columns: Vec<ColumnRef>,
    pub subqueries: Vec<Select>,
}

impl Expr {
    fn absorb(&mut self, other: Expr) {
        self.aggregates += other.aggregates;
        self.columns.extend(other.columns);
        self.subqueries.extend(other.subqueries);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub span: Range<usize>,
    pub negated: bool,
    pub op: Option<PredicateOp>,
    pub lhs: Expr,
    pub rhs: Vec<Expr>,
}

impl Predicate {
    pub fn has_aggregate(&self) -> bool {
        self.lhs.aggregates > 0
    }

    pub fn subqueries(&self) -> impl Iterator<Item = &Select> {
        std::iter::once(&self.lhs)
            .chain(self.rhs.iter())
            .flat_map(|e| e.subqueries.iter())
    }
}

/// Predicates flattened at AND/OR boundaries; `connectors.len() + 1 == predicates.len()`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Condition {
    pub span: Range<usize>,
    pub predicates: Vec<Predicate>,
    pub connectors: Vec<Connector>,
}

impl Condition {
    fn into_expr(self) -> Expr {
        let mut expr = Expr {
            span: self.span,
            ..Expr::default()
        };
        for p in self.predicates {
            expr.absorb(p.lhs);
            for r in p.rhs {
                expr.absorb(r);
            }
        }
        expr
    }

    fn merge(&mut self, other: Condition) {
        self.predicates.extend(other.predicates);
        self.connectors.extend(other.connectors);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TableSource {
    Table {
        name: String,
        alias: Option<String>,
    },
    Subquery {
        query: Box<Select>,
        alias: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FromClause {
    pub sources: Vec<TableSource>,
    pub join_conditions: Vec<Condition>,
}

impl FromClause {
    pub fn table_names(&self) -> impl Iterator<Item = &str> {
        self.sources.iter().filter_map(|s| match s {
            TableSource::Table { name, .. } => Some(name.as_str()),
            TableSource::Subquery { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderItem {
    pub expr: Expr,
    pub descending: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClauseKind {
    Where,
    GroupBy,
    Having,
    OrderBy,
    Limit,
}

/// Byte span of one trailing clause, keyword included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClauseSpan {
    pub kind: ClauseKind,
    pub span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Select {
    pub span: Range<usize>,
    pub distinct: bool,
    pub items: Vec<Expr>,
    pub from: Option<FromClause>,
    pub where_clause: Option<Condition>,
    pub group_by: Vec<Expr>,
    pub having: Option<Condition>,
    pub order_by: Vec<OrderItem>,
    pub limit: Option<Expr>,
    pub compound: Option<(SetOp, Box<Select>)>,
    /// SELECT keyword up to the first trailing clause (or the end).
    pub head_span: Range<usize>,
    pub clauses: Vec<ClauseSpan>,
}

impl Select {
    /// ORDER BY anywhere on the compound chain, which SQLite applies to the
    /// whole result.
    pub fn has_order_by(&self) -> bool {
        !self.order_by.is_empty()
            || self
                .compound
                .as_ref()
                .is_some_and(|(_, rest)| rest.has_order_by())
    }

    pub fn clause(&self, kind: ClauseKind) -> Option<&ClauseSpan> {
        self.clauses.iter().find(|c| c.kind == kind)
    }
}

/// A parsed statement, retaining the source text and tokens it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub source: String,
    pub tokens: Vec<Token>,
    pub select: Select,
}

impl Query {
    pub fn text(&self, span: &Range<usize>) -> &str {
        &self.source[span.clone()]
    }
}

pub fn parse(sql: &str) -> Result<Query, SqlError> {
    let tokens = tokenize(sql)?;
    if tokens.iter().all(|t| t.is_symbol(";")) {
        return Err(SqlError::Empty);
    }
    let select = {
        let mut p = Parser {
            tokens: &tokens,
            pos: 0,
            depth: 0,
            not_grouped: vec![false; tokens.len()],
        };
        let select = p.select()?;
        while p.eat_symbol(";") {}
        if let Some(t) = p.peek() {
            return Err(SqlError::TrailingInput {
                offset: t.span.start,
                found: t.text.clone(),
            });
        }
        select
    };
    Ok(Query {
        source: sql.to_string(),
        tokens,
        select,
    })
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    depth: usize,
    /// Positions of `(` already known not to open a grouped condition.
    not_grouped: Vec<bool>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, ahead: usize) -> Option<&'a Token> {
        self.tokens.get(self.pos + ahead)
    }

    fn bump(&mut self) -> Option<&'a Token> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn offset(&self) -> usize {
        self.peek()
            .map(|t| t.span.start)
            .or_else(|| self.tokens.last().map(|t| t.span.end))
            .unwrap_or(0)
    }

    fn prev_end(&self) -> usize {
        if self.pos == 0 {
            0
        } else {
            self.tokens[self.pos - 1].span.end
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        self.peek().is_some_and(|t| t.is_keyword(kw))
    }

    fn at_symbol(&self, sym: &str) -> bool {
        self.peek().is_some_and(|t| t.is_symbol(sym))
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.at_keyword(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_symbol(&mut self, sym: &str) -> bool {
        if self.at_symbol(sym) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn unexpected(&self, expected: &'static str) -> SqlError {
        match self.peek() {
            Some(t) => SqlError::Unexpected {
                offset: t.span.start,
                found: t.text.clone(),
                expected,
            },
            None => SqlError::UnexpectedEnd { expected },
        }
    }

    fn expect_keyword(&mut self, kw: &'static str) -> Result<(), SqlError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(self.unexpected(kw))
        }
    }

    fn expect_symbol(&mut self, sym: &'static str) -> Result<(), SqlError> {
        if self.eat_symbol(sym) {
            Ok(())
        } else {
            Err(self.unexpected(sym))
        }
    }

    fn enter(&mut self) -> Result<(), SqlError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(SqlError::TooDeep { limit: MAX_DEPTH });
        }
        Ok(())
    }

    fn leave(&mut self) {
        self.depth -= 1;
    }

    /// Identifier, or a keyword SQLite would accept as one.
    fn at_name(&self) -> bool {
        self.peek().is_some_and(is_name)
    }

    fn name(&mut self) -> Result<String, SqlError> {
        if self.at_name() {
            Ok(unquote(&self.bump().expect("peeked").text))
        } else {
            Err(self.unexpected("identifier"))
        }
    }

    fn select(&mut self) -> Result<Select, SqlError> {
        self.enter()?;
        let result = self.select_inner();
        self.leave();
        result
    }

    fn select_inner(&mut self) -> Result<Select, SqlError> {
        let start = self.offset();
        if self.at_keyword("WITH") {
            return Err(SqlError::Unsupported {
                offset: start,
                what: "common table expressions",
            });
        }
        self.expect_keyword("SELECT")?;
        let mut select = Select {
            distinct: self.eat_keyword("DISTINCT"),
            ..Select::default()
        };
        if !select.distinct {
            self.eat_keyword("ALL");
        }

        loop {
            select.items.push(self.select_item()?);
            if !self.eat_symbol(",") {
                break;
            }
        }
        if self.eat_keyword("FROM") {
            select.from = Some(self.from_clause()?);
        }
        let head_end = self.prev_end();

        if self.at_keyword("WHERE") {
            let s = self.offset();
            self.bump();
            select.where_clause = Some(self.condition()?);
            select.clauses.push(self.clause_span(ClauseKind::Where, s));
        }
        if self.at_keyword("GROUP") {
            let s = self.offset();
            self.bump();
            self.expect_keyword("BY")?;
            select.group_by = self.expr_list()?;
            select.clauses.push(self.clause_span(ClauseKind::GroupBy, s));
        }
        if self.at_keyword("HAVING") {
            let s = self.offset();
            self.bump();
            select.having = Some(self.condition()?);
            select.clauses.push(self.clause_span(ClauseKind::Having, s));
        }

        let set_op = if self.eat_keyword("UNION") {
            Some(if self.eat_keyword("ALL") {
                SetOp::UnionAll
            } else {
                SetOp::Union
            })
        } else if self.eat_keyword("INTERSECT") {
            Some(SetOp::Intersect)
        } else if self.eat_keyword("EXCEPT") {
            Some(SetOp::Except)
        } else {
            None
        };
        if let Some(op) = set_op {
            let rest = self.select()?;
            select.compound = Some((op, Box::new(rest)));
        } else {
            if self.at_keyword("ORDER") {
                let s = self.offset();
                self.bump();
                self.expect_keyword("BY")?;
                loop {
                    let expr = self.value_expr()?;
                    let descending = if self.eat_keyword("DESC") {
                        true
                    } else {
                        self.eat_keyword("ASC");
                        false
                    };
                    if self.eat_keyword("NULLS") && !self.eat_keyword("FIRST") {
                        self.expect_keyword("LAST")?;
                    }
                    select.order_by.push(OrderItem { expr, descending });
                    if !self.eat_symbol(",") {
                        break;
                    }
                }
                select.clauses.push(self.clause_span(ClauseKind::OrderBy, s));
            }
            if self.at_keyword("LIMIT") {
                let s = self.offset();
                self.bump();
                let mut limit = self.expr()?;
                if self.eat_keyword("OFFSET") || self.eat_symbol(",") {
                    let extra = self.expr()?;
                    limit.span.end = extra.span.end;
                    limit.absorb(extra);
                }
                select.limit = Some(limit);
                select.clauses.push(self.clause_span(ClauseKind::Limit, s));
            }
        }

        select.span = start..self.prev_end();
        select.head_span = start..head_end;
        Ok(select)
    }

    fn clause_span(&self, kind: ClauseKind, start: usize) -> ClauseSpan {
        ClauseSpan {
            kind,
            span: start..self.prev_end(),
        }
    }

    fn select_item(&mut self) -> Result<Expr, SqlError> {
        let start = self.offset();
        if self.eat_symbol("*") {
            return Ok(Expr {
                span: start..self.prev_end(),
                ..Expr::default()
            });
        }
        let expr = self.value_expr()?;
        if self.eat_keyword("AS") {
            if self.peek().is_some_and(|t| t.kind == TokenKind::String) {
                self.bump();
            } else {
                self.name()?;
            }
        } else if self.peek().is_some_and(|t| t.kind == TokenKind::Ident) {
            self.bump();
        }
        Ok(expr)
    }

    fn from_clause(&mut self) -> Result<FromClause, SqlError> {
        let mut from = FromClause::default();
        self.table_source(&mut from)?;
        loop {
            if self.eat_symbol(",") {
                self.table_source(&mut from)?;
                continue;
            }
            let save = self.pos;
            self.eat_keyword("NATURAL");
            if self.eat_keyword("LEFT") || self.eat_keyword("RIGHT") || self.eat_keyword("FULL") {
                self.eat_keyword("OUTER");
            } else if !self.eat_keyword("INNER") {
                self.eat_keyword("CROSS");
            }
            if !self.eat_keyword("JOIN") {
                self.pos = save;
                break;
            }
            self.table_source(&mut from)?;
            if self.eat_keyword("ON") {
                let cond = self.condition()?;
                from.join_conditions.push(cond);
            } else if self.eat_keyword("USING") {
                self.expect_symbol("(")?;
                loop {
                    self.name()?;
                    if !self.eat_symbol(",") {
                        break;
                    }
                }
                self.expect_symbol(")")?;
            }
        }
        Ok(from)
    }

    fn table_source(&mut self, from: &mut FromClause) -> Result<(), SqlError> {
        if self.eat_symbol("(") {
            self.enter()?;
            if self.at_keyword("SELECT") {
                let query = self.select()?;
                self.expect_symbol(")")?;
                self.leave();
                let alias = self.alias()?;
                from.sources.push(TableSource::Subquery {
                    query: Box::new(query),
                    alias,
                });
            } else {
                let inner = self.from_clause()?;
                self.expect_symbol(")")?;
                self.leave();
                from.sources.extend(inner.sources);
                from.join_conditions.extend(inner.join_conditions);
            }
            return Ok(());
        }

        let mut name = self.name()?;
        if self.eat_symbol(".") {
            name = self.name()?;
        }
        if self.at_symbol("(") {
            // table-valued function
            self.bump();
            if !self.at_symbol(")") {
                self.expr_list()?;
            }
            self.expect_symbol(")")?;
        }
        let alias = self.alias()?;
        if self.eat_keyword("INDEXED") {
            self.expect_keyword("BY")?;
            self.name()?;
        } else if self.at_keyword("NOT") && self.peek_at(1).is_some_and(|t| t.is_keyword("INDEXED"))
        {
            self.pos += 2;
        }
        from.sources.push(TableSource::Table { name, alias });
        Ok(())
    }

    fn alias(&mut self) -> Result<Option<String>, SqlError> {
        if self.eat_keyword("AS") {
            return self.name().map(Some);
        }
        if self.peek().is_some_and(|t| t.kind == TokenKind::Ident) {
            return Ok(Some(unquote(&self.bump().expect("peeked").text)));
        }
        Ok(None)
    }

    fn expr_list(&mut self) -> Result<Vec<Expr>, SqlError> {
        let mut out = vec![self.value_expr()?];
        while self.eat_symbol(",") {
            out.push(self.value_expr()?);
        }
        Ok(out)
    }

    /// Any expression including comparisons and boolean connectives.
    fn value_expr(&mut self) -> Result<Expr, SqlError> {
        Ok(self.condition()?.into_expr())
    }

    fn condition(&mut self) -> Result<Condition, SqlError> {
        self.enter()?;
        let start = self.offset();
        let mut cond = Condition::default();
        let result = (|| {
            self.predicate_into(&mut cond)?;
            loop {
                let connector = if self.eat_keyword("AND") {
                    Connector::And
                } else if self.eat_keyword("OR") {
                    Connector::Or
                } else {
                    break;
                };
                cond.connectors.push(connector);
                self.predicate_into(&mut cond)?;
            }
            Ok(())
        })();
        self.leave();
        result?;
        cond.span = start..self.prev_end();
        Ok(cond)
    }

    fn predicate_into(&mut self, cond: &mut Condition) -> Result<(), SqlError> {
        let start = self.offset();
        let negated = self.eat_keyword("NOT");

        if self.at_symbol("(")
            && !self.not_grouped[self.pos]
            && !self.peek_at(1).is_some_and(|t| t.is_keyword("SELECT"))
        {
            let (save, save_depth) = (self.pos, self.depth);
            self.bump();
            if let Ok(inner) = self.condition() {
                if self.eat_symbol(")") && !self.peek().is_some_and(continues_operand) {
                    let grouped = inner.predicates.len() > 1;
                    if grouped || inner.predicates.iter().any(|p| p.op.is_some()) {
                        let mut inner = inner;
                        if negated {
                            if let Some(first) = inner.predicates.first_mut() {
                                first.negated = !first.negated;
                            }
                        }
                        cond.merge(inner);
                        return Ok(());
                    }
                }
            }
            self.pos = save;
            self.depth = save_depth;
            self.not_grouped[save] = true;
        }

        if self.at_keyword("EXISTS") {
            let lhs = self.expr()?;
            cond.predicates.push(Predicate {
                span: start..self.prev_end(),
                negated,
                op: Some(PredicateOp::Exists),
                lhs,
                rhs: Vec::new(),
            });
            return Ok(());
        }

        let lhs = self.expr()?;
        let mut negated = negated;
        let mut rhs = Vec::new();
        let op = match self.peek() {
            Some(t) if is_comparison(t) => {
                self.bump();
                rhs.push(self.expr()?);
                Some(PredicateOp::Compare)
            }
            Some(t) if t.is_keyword("ISNULL") => {
                self.bump();
                Some(PredicateOp::IsNull)
            }
            Some(t) if t.is_keyword("NOTNULL") => {
                self.bump();
                Some(PredicateOp::NotNull)
            }
            Some(t) if t.is_keyword("IS") => {
                self.bump();
                if self.eat_keyword("NOT") {
                    negated = !negated;
                }
                self.eat_keyword("DISTINCT");
                self.eat_keyword("FROM");
                rhs.push(self.expr()?);
                Some(PredicateOp::Is)
            }
            Some(t) if t.kind == TokenKind::Keyword => {
                let save = self.pos;
                let not = self.eat_keyword("NOT");
                let op = match self.peek().map(|t| t.norm.as_str()) {
                    Some("LIKE") => Some(PredicateOp::Like),
                    Some("GLOB") => Some(PredicateOp::Glob),
                    Some("REGEXP") => Some(PredicateOp::Regexp),
                    Some("MATCH") => Some(PredicateOp::Match),
                    Some("IN") => Some(PredicateOp::In),
                    Some("BETWEEN") => Some(PredicateOp::Between),
                    // `x NOT NULL`
                    Some("NULL") if not => Some(PredicateOp::NotNull),
                    _ => None,
                };
                match op {
                    None => {
                        self.pos = save;
                        None
                    }
                    Some(PredicateOp::NotNull) => {
                        self.bump();
                        Some(PredicateOp::NotNull)
                    }
                    Some(op) => {
                        negated ^= not;
                        self.bump();
                        rhs.push(self.expr()?);
                        match op {
                            PredicateOp::Between => {
                                self.expect_keyword("AND")?;
                                rhs.push(self.expr()?);
                            }
                            PredicateOp::Like | PredicateOp::Glob if self.eat_keyword("ESCAPE") => {
                                rhs.push(self.expr()?);
                            }
                            _ => {}
                        }
                        Some(op)
                    }
                }
            }
            _ => None,
        };
        cond.predicates.push(Predicate {
            span: start..self.prev_end(),
            negated,
            op,
            lhs,
            rhs,
        });
        Ok(())
    }

    /// Arithmetic-level expression: terms joined by binary operators.
    fn expr(&mut self) -> Result<Expr, SqlError> {
        let start = self.offset();
        let mut acc = Expr::default();
        self.term(&mut acc)?;
        loop {
            match self.peek() {
                Some(t) if is_binary_operator(t) => {
                    self.bump();
                    self.term(&mut acc)?;
                }
                Some(t) if t.is_keyword("COLLATE") => {
                    self.bump();
                    self.name()?;
                }
                _ => break,
            }
        }
        acc.span = start..self.prev_end();
        Ok(acc)
    }

    fn term(&mut self, acc: &mut Expr) -> Result<(), SqlError> {
        self.enter()?;
        let result = self.term_inner(acc);
        self.leave();
        result
    }

    fn term_inner(&mut self, acc: &mut Expr) -> Result<(), SqlError> {
        let Some(tok) = self.peek() else {
            return Err(self.unexpected("expression"));
        };
        match tok.kind {
            TokenKind::Number | TokenKind::String | TokenKind::Blob | TokenKind::Param => {
                self.bump();
                Ok(())
            }
            TokenKind::Symbol => match tok.text.as_str() {
                "-" | "+" | "~" => {
                    self.bump();
                    self.term(acc)
                }
                "*" => {
                    self.bump();
                    Ok(())
                }
                "(" => {
                    self.bump();
                    if self.at_keyword("SELECT") {
                        let sub = self.select()?;
                        acc.subqueries.push(sub);
                    } else {
                        loop {
                            let e = self.value_expr()?;
                            acc.absorb(e);
                            if !self.eat_symbol(",") {
                                break;
                            }
                        }
                    }
                    self.expect_symbol(")")
                }
                _ => Err(self.unexpected("expression")),
            },
            TokenKind::Keyword => match tok.norm.as_str() {
                "NULL" | "CURRENT_DATE" | "CURRENT_TIME" | "CURRENT_TIMESTAMP" => {
                    self.bump();
                    Ok(())
                }
                "NOT" => {
                    self.bump();
                    self.term(acc)
                }
                "EXISTS" => {
                    self.bump();
                    self.expect_symbol("(")?;
                    let sub = self.select()?;
                    acc.subqueries.push(sub);
                    self.expect_symbol(")")
                }
                "CAST" => {
                    self.bump();
                    self.expect_symbol("(")?;
                    let inner = self.value_expr()?;
                    acc.absorb(inner);
                    self.expect_keyword("AS")?;
                    let mut depth = 0usize;
                    loop {
                        match self.peek() {
                            None => return Err(self.unexpected(")")),
                            Some(t) if t.is_symbol(")") && depth == 0 => break,
                            Some(t) if t.is_symbol(")") => depth -= 1,
                            Some(t) if t.is_symbol("(") => depth += 1,
                            _ => {}
                        }
                        self.bump();
                    }
                    self.expect_symbol(")")
                }
                "CASE" => {
                    self.bump();
                    if !self.at_keyword("WHEN") {
                        let e = self.value_expr()?;
                        acc.absorb(e);
                    }
                    if !self.at_keyword("WHEN") {
                        return Err(self.unexpected("WHEN"));
                    }
                    while self.eat_keyword("WHEN") {
                        let c = self.value_expr()?;
                        acc.absorb(c);
                        self.expect_keyword("THEN")?;
                        let e = self.value_expr()?;
                        acc.absorb(e);
                    }
                    if self.eat_keyword("ELSE") {
                        let e = self.value_expr()?;
                        acc.absorb(e);
                    }
                    self.expect_keyword("END")
                }
                _ if is_name(tok) => self.name_term(acc),
                _ => Err(self.unexpected("expression")),
            },
            TokenKind::Ident => self.name_term(acc),
        }
    }

    /// Column reference or function call.
    fn name_term(&mut self, acc: &mut Expr) -> Result<(), SqlError> {
        let first = self.name()?;
        if self.eat_symbol("(") {
            if AGGREGATES.contains(&first.to_ascii_lowercase().as_str()) {
                acc.aggregates += 1;
            }
            if !self.eat_symbol(")") {
                if !self.eat_symbol("*") {
                    self.eat_keyword("DISTINCT");
                    loop {
                        let arg = self.value_expr()?;
                        acc.absorb(arg);
                        if !self.eat_symbol(",") {
                            break;
                        }
                    }
                }
                self.expect_symbol(")")?;
            }
            if self.eat_keyword("FILTER") {
                self.expect_symbol("(")?;
                self.expect_keyword("WHERE")?;
                let c = self.value_expr()?;
                acc.absorb(c);
                self.expect_symbol(")")?;
            }
            if self.at_keyword("OVER") {
                return Err(SqlError::Unsupported {
                    offset: self.offset(),
                    what: "window functions",
                });
            }
            return Ok(());
        }
        if self.eat_symbol(".") {
            if self.eat_symbol("*") {
                return Ok(());
            }
            let second = self.name()?;
            if self.eat_symbol(".") {
                let third = self.name()?;
                acc.columns.push(ColumnRef {
                    qualifier: Some(second),
                    name: third,
                });
            } else {
                acc.columns.push(ColumnRef {
                    qualifier: Some(first),
                    name: second,
                });
            }
            return Ok(());
        }
        acc.columns.push(ColumnRef {
            qualifier: None,
            name: first,
        });
        Ok(())
    }
}

fn is_name(t: &Token) -> bool {
    t.kind == TokenKind::Ident
        || (t.kind == TokenKind::Keyword && FALLBACK_IDENTS.contains(&t.norm.as_str()))
}

pub(crate) fn is_comparison(t: &Token) -> bool {
    t.kind == TokenKind::Symbol
        && matches!(t.text.as_str(), "=" | "==" | "!=" | "<>" | "<" | ">" | "<=" | ">=")
}

fn is_binary_operator(t: &Token) -> bool {
    t.kind == TokenKind::Symbol
        && matches!(
            t.text.as_str(),
            "+" | "-" | "*" | "/" | "%" | "||" | "&" | "|" | "<<" | ">>" | "->"
        )
}

/// Whether a token after `( ... )` means the group was an operand, not a
/// parenthesised condition.
fn continues_operand(t: &Token) -> bool {
    is_comparison(t)
        || is_binary_operator(t)
        || ["IN", "LIKE", "GLOB", "BETWEEN", "IS", "ISNULL", "NOTNULL", "REGEXP", "MATCH", "COLLATE"]
            .iter()
            .any(|kw| t.is_keyword(kw))
        || t.is_keyword("NOT")
}

pub fn unquote(text: &str) -> String {
    let bytes = text.as_bytes();
    match (bytes.first(), bytes.last()) {
        (Some(b'`'), Some(b'`')) | (Some(b'"'), Some(b'"')) if text.len() >= 2 => {
            let q = &text[..1];
            text[1..text.len() - 1].replace(&format!("{q}{q}"), q)
        }
        (Some(b'['), Some(b']')) if text.len() >= 2 => text[1..text.len() - 1].to_string(),
        _ => text.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sel(sql: &str) -> Select {
        parse(sql).unwrap_or_else(|e| panic!("{sql}: {e}")).select
    }

    #[test]
    fn simple_where() {
        let s = sel("SELECT name FROM singer WHERE age > 20");
        assert_eq!(s.items.len(), 1);
        assert_eq!(s.from.as_ref().unwrap().sources.len(), 1);
        let w = s.where_clause.unwrap();
        assert_eq!(w.predicates.len(), 1);
        assert_eq!(w.predicates[0].op, Some(PredicateOp::Compare));
    }

    #[test]
    fn joins_and_aliases() {
        let s = sel("SELECT T1.name FROM a AS T1 JOIN b AS T2 ON T1.id = T2.id GROUP BY T1.name");
        let from = s.from.unwrap();
        assert_eq!(from.sources.len(), 2);
        assert_eq!(from.join_conditions.len(), 1);
        assert_eq!(s.group_by.len(), 1);
        assert_eq!(
            s.items[0].columns,
            vec![ColumnRef {
                qualifier: Some("T1".into()),
                name: "name".into()
            }]
        );
    }

    #[test]
    fn nested_in_subquery() {
        let s = sel("SELECT name FROM t WHERE id IN (SELECT id FROM s WHERE x = 1)");
        let w = s.where_clause.unwrap();
        assert_eq!(w.predicates[0].op, Some(PredicateOp::In));
        assert_eq!(w.predicates[0].subqueries().count(), 1);
    }

    #[test]
    fn aggregates_counted() {
        let s = sel("SELECT count(*), avg(age), name FROM singer");
        let aggs: usize = s.items.iter().map(|e| e.aggregates).sum();
        assert_eq!(aggs, 2);
    }

    #[test]
    fn between_and_not_like() {
        let s = sel("SELECT a FROM t WHERE b BETWEEN 1 AND 5 AND c NOT LIKE '%x%' OR d IS NOT NULL");
        let w = s.where_clause.unwrap();
        assert_eq!(w.predicates.len(), 3);
        assert_eq!(w.connectors, vec![Connector::And, Connector::Or]);
        assert_eq!(w.predicates[1].op, Some(PredicateOp::Like));
        assert!(w.predicates[1].negated);
        assert!(w.predicates[2].negated);
    }

    #[test]
    fn parenthesised_conditions_flatten() {
        let s = sel("SELECT a FROM t WHERE (b = 1 OR c = 2) AND (d + 1) > 3");
        let w = s.where_clause.unwrap();
        assert_eq!(w.predicates.len(), 3);
        assert_eq!(w.connectors, vec![Connector::Or, Connector::And]);
    }

    #[test]
    fn compound_and_order() {
        let s = sel("SELECT a FROM t UNION SELECT b FROM u ORDER BY a DESC LIMIT 3");
        assert!(s.order_by.is_empty());
        assert!(s.has_order_by());
        let (op, rest) = s.compound.unwrap();
        assert_eq!(op, SetOp::Union);
        assert!(rest.limit.is_some());
    }

    #[test]
    fn clause_spans_slice_source() {
        let sql = "SELECT name FROM singer WHERE age > 20 ORDER BY age DESC LIMIT 3";
        let q = parse(sql).unwrap();
        assert_eq!(q.text(&q.select.head_span), "SELECT name FROM singer");
        let texts: Vec<_> = q.select.clauses.iter().map(|c| q.text(&c.span)).collect();
        assert_eq!(texts, vec!["WHERE age > 20", "ORDER BY age DESC", "LIMIT 3"]);
    }

    #[test]
    fn select_without_from() {
        let s = sel("SELECT 1");
        assert!(s.from.is_none());
    }

    #[test]
    fn case_cast_exists() {
        sel("SELECT CASE WHEN a > 1 THEN 'x' ELSE 'y' END, CAST(b AS INTEGER) FROM t WHERE EXISTS (SELECT 1 FROM u)");
        sel("SELECT count(DISTINCT name) FROM singer WHERE name LIKE 'a%' ESCAPE '\\'");
    }

    #[test]
    fn errors() {
        assert!(matches!(parse(""), Err(SqlError::Empty)));
        assert!(matches!(parse("  ;"), Err(SqlError::Empty)));
        assert!(matches!(parse("SELECT"), Err(SqlError::UnexpectedEnd { .. })));
        assert!(matches!(parse("SELECT a FROM"), Err(SqlError::UnexpectedEnd { .. })));
        assert!(matches!(parse("SELECT (a FROM t"), Err(SqlError::Unexpected { .. })));
        assert!(matches!(parse("UPDATE t SET a = 1"), Err(SqlError::Unexpected { .. })));
        assert!(matches!(parse("SELECT a FROM t garbage more"), Err(SqlError::TrailingInput { .. })));
    }

    #[test]
    fn depth_limit() {
        let sql = format!("SELECT {}1{}", "(".repeat(500), ")".repeat(500));
        assert!(matches!(parse(&sql), Err(SqlError::TooDeep { .. })));
    }
}
