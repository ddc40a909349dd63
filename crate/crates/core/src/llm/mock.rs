//! Deterministic offline provider for tests and dry runs.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Mutex;

use super::prompts::{
    QUESTION_HEADER, QUESTION_MARKER, QUESTION_CUE, SYNTH_MARKER, TEXT2SQL_MARKER,
};
use super::{LlmError, LlmRequest, Provider};
use crate::sqlkit::{parse, ClauseKind, Condition, Expr, Select, TableSource};

/// Answers each prompt kind by rule, without I/O:
///
/// * fusion: SQL1 with one trailing clause group of SQL2 (WHERE, GROUP BY
///   with HAVING, or ORDER BY with LIMIT) added when SQL1 lacks that kind and
///   every column it mentions resolves in SQL1's tables; SQL1 verbatim
///   otherwise. SQL2's last group is tried first.
/// * scratch: simple queries cycling over the schema's tables and columns.
/// * question: a literal verbalisation of the SQL, remembered so that a
///   later text-to-SQL prompt for that question returns the same SQL.
/// * text-to-SQL: the answer key, then remembered questions, then the first
///   demonstration's SQL.
///
/// Scripted replies, when present, are returned first in order.
#[derive(Debug, Default)]
pub struct MockProvider {
    seed: u64,
    answers: BTreeMap<String, String>,
    memo: Mutex<HashMap<String, String>>,
    script: Mutex<VecDeque<Result<Vec<String>, LlmError>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PromptKind {
    Fusion,
    Scratch,
    Question,
    Text2Sql,
}

impl MockProvider {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Fixed text-to-SQL answers, keyed by question.
    pub fn with_answers(mut self, answers: impl IntoIterator<Item = (String, String)>) -> Self {
        self.answers.extend(answers);
        self
    }

    pub fn with_script(self, script: Vec<Result<Vec<String>, LlmError>>) -> Self {
        *self.script.lock().unwrap() = script.into();
        self
    }

    /// Queues more scripted replies.
    pub fn push_script(&self, reply: Result<Vec<String>, LlmError>) {
        self.script.lock().unwrap().push_back(reply);
    }

    fn kind(prompt: &str) -> Option<PromptKind> {
        if prompt.contains(TEXT2SQL_MARKER) {
            Some(PromptKind::Text2Sql)
        } else if prompt.starts_with(QUESTION_HEADER) {
            Some(PromptKind::Question)
        } else if prompt.contains(&format!("{SYNTH_MARKER} imitating ")) {
            Some(PromptKind::Fusion)
        } else if prompt.contains(&format!("{SYNTH_MARKER}.")) {
            Some(PromptKind::Scratch)
        } else {
            None
        }
    }

    fn answer(&self, prompt: &str, n: usize) -> Result<Vec<String>, LlmError> {
        let kind = Self::kind(prompt)
            .ok_or_else(|| LlmError::InvalidRequest("mock: unrecognised prompt".into()))?;
        let tables = prompt_tables(prompt);
        Ok(match kind {
            PromptKind::Fusion => {
                let line = last_line_after(prompt, &format!("{SYNTH_MARKER} imitating "))
                    .ok_or_else(|| LlmError::malformed("mock: no fusion line"))?;
                let line = line.strip_suffix('.').unwrap_or(line);
                let sql = split_pair(line)
                    .map(|(a, b)| fuse(a, b, &tables))
                    .unwrap_or_else(|| line.to_owned());
                vec![continuation(&sql); n]
            }
            PromptKind::Scratch => (0..n)
                .map(|i| continuation(&scratch(&tables, i + (self.seed % 97) as usize)))
                .collect(),
            PromptKind::Question => {
                let sql = last_line_after(prompt, QUESTION_MARKER)
                    .ok_or_else(|| LlmError::malformed("mock: no SQL line"))?;
                let sql = sql.strip_suffix('.').unwrap_or(sql);
                let q = verbalize(sql);
                // Smallest SQL wins so concurrent callers agree on the memo.
                self.memo
                    .lock()
                    .unwrap()
                    .entry(q.clone())
                    .and_modify(|s| {
                        if sql < s.as_str() {
                            *s = sql.to_owned();
                        }
                    })
                    .or_insert_with(|| sql.to_owned());
                vec![format!(" {q}"); n]
            }
            PromptKind::Text2Sql => {
                let q = last_line_after(prompt, QUESTION_CUE).unwrap_or("").trim();
                let memo = self.memo.lock().unwrap();
                let sql = self
                    .answers
                    .get(q)
                    .or_else(|| memo.get(q))
                    .cloned()
                    .or_else(|| first_demo_sql(prompt))
                    .unwrap_or_else(|| "SELECT 1".into());
                vec![continuation(&sql); n]
            }
        })
    }
}

impl Provider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &LlmRequest) -> Result<Vec<String>, LlmError> {
        if let Some(reply) = self.script.lock().unwrap().pop_front() {
            return reply;
        }
        self.answer(&request.prompt, request.n)
    }
}

/// Text following the `SELECT` cue, as a model would continue it.
fn continuation(sql: &str) -> String {
    let sql = sql.trim();
    let body = match sql.get(..6) {
        Some(h) if h.eq_ignore_ascii_case("SELECT") => &sql[6..],
        _ => sql,
    };
    format!("{body};")
}

fn last_line_after<'a>(prompt: &'a str, prefix: &str) -> Option<&'a str> {
    prompt.lines().rev().find_map(|l| l.strip_prefix(prefix))
}

fn first_demo_sql(prompt: &str) -> Option<String> {
    let mut lines = prompt.lines();
    while let Some(l) = lines.next() {
        if l.starts_with(QUESTION_CUE) {
            let next = lines.next()?;
            if next.trim() != "SELECT" {
                return Some(next.to_owned());
            }
            return None;
        }
    }
    None
}

/// Table name -> column names, from the prompt's `CREATE TABLE` lines.
fn prompt_tables(prompt: &str) -> Vec<(String, Vec<String>)> {
    prompt
        .lines()
        .filter_map(|l| l.strip_prefix("CREATE TABLE "))
        .filter_map(|rest| {
            let (name, cols) = rest.split_once(" (")?;
            let cols = cols.strip_suffix(')')?;
            let cols = cols
                .split(", ")
                .filter_map(|c| c.split_whitespace().next())
                .map(str::to_owned)
                .collect();
            Some((name.to_owned(), cols))
        })
        .collect()
}

/// Splits "A and B" where both halves parse.
fn split_pair(line: &str) -> Option<(&str, &str)> {
    line.match_indices(" and ")
        .map(|(i, _)| (&line[..i], &line[i + 5..]))
        .find(|(a, b)| parse(a).is_ok() && parse(b).is_ok())
}

fn group_of(kind: ClauseKind) -> usize {
    match kind {
        ClauseKind::Where => 0,
        ClauseKind::GroupBy | ClauseKind::Having => 1,
        ClauseKind::OrderBy | ClauseKind::Limit => 2,
    }
}

fn condition_exprs(c: &Option<Condition>) -> impl Iterator<Item = &Expr> {
    c.iter()
        .flat_map(|c| c.predicates.iter())
        .flat_map(|p| std::iter::once(&p.lhs).chain(p.rhs.iter()))
}

fn exprs_of_group(select: &Select, group: usize) -> Vec<&Expr> {
    let mut out: Vec<&Expr> = Vec::new();
    match group {
        0 => out.extend(condition_exprs(&select.where_clause)),
        1 => {
            out.extend(select.group_by.iter());
            out.extend(condition_exprs(&select.having));
        }
        _ => {
            out.extend(select.order_by.iter().map(|o| &o.expr));
            out.extend(select.limit.iter());
        }
    }
    out
}

fn fuse(sql1: &str, sql2: &str, tables: &[(String, Vec<String>)]) -> String {
    fuse_inner(sql1, sql2, tables).unwrap_or_else(|| sql1.to_owned())
}

fn fuse_inner(sql1: &str, sql2: &str, tables: &[(String, Vec<String>)]) -> Option<String> {
    let q1 = parse(sql1).ok()?;
    let q2 = parse(sql2).ok()?;
    let (s1, s2) = (&q1.select, &q2.select);
    if s1.compound.is_some() || s2.compound.is_some() {
        return None;
    }
    // alias or table name (lowercase) -> columns of that table
    let mut scope: Vec<(String, &Vec<String>)> = Vec::new();
    if let Some(from) = &s1.from {
        for src in &from.sources {
            let TableSource::Table { name, alias } = src else {
                return None;
            };
            let (_, cols) = tables.iter().find(|(t, _)| t.eq_ignore_ascii_case(name))?;
            scope.push((name.to_lowercase(), cols));
            if let Some(a) = alias {
                scope.push((a.to_lowercase(), cols));
            }
        }
    }
    let resolves = |e: &Expr| {
        e.columns.iter().all(|c| match &c.qualifier {
            Some(q) => scope.iter().any(|(n, cols)| {
                *n == q.to_lowercase() && cols.iter().any(|x| x.eq_ignore_ascii_case(&c.name))
            }),
            None => scope
                .iter()
                .any(|(_, cols)| cols.iter().any(|x| x.eq_ignore_ascii_case(&c.name))),
        })
    };

    let mut groups: Vec<usize> = s2.clauses.iter().map(|c| group_of(c.kind)).collect();
    groups.dedup();
    let have: Vec<usize> = s1.clauses.iter().map(|c| group_of(c.kind)).collect();
    for &g in groups.iter().rev() {
        if have.contains(&g) || !exprs_of_group(s2, g).into_iter().all(&resolves) {
            continue;
        }
        let mut parts: Vec<(usize, &str)> = s1
            .clauses
            .iter()
            .map(|c| (group_of(c.kind), q1.text(&c.span)))
            .collect();
        parts.extend(
            s2.clauses
                .iter()
                .filter(|c| group_of(c.kind) == g)
                .map(|c| (g, q2.text(&c.span))),
        );
        parts.sort_by_key(|(g, _)| *g);
        let mut out = q1.text(&s1.head_span).trim().to_owned();
        for (_, text) in parts {
            out.push(' ');
            out.push_str(text.trim());
        }
        if parse(&out).is_ok() {
            return Some(out);
        }
    }
    None
}

fn scratch(tables: &[(String, Vec<String>)], i: usize) -> String {
    let usable: Vec<&(String, Vec<String>)> = tables.iter().filter(|(_, c)| !c.is_empty()).collect();
    if usable.is_empty() {
        return "SELECT 1".into();
    }
    let nt = usable.len();
    let (t, cols) = usable[i % nt];
    let round = i / nt;
    let c = &cols[round % cols.len()];
    match round % 5 {
        0 => format!("SELECT count(*) FROM {t}"),
        1 => format!("SELECT {c} FROM {t}"),
        2 => format!("SELECT {c} FROM {t} WHERE {c} IS NOT NULL"),
        3 => format!("SELECT {c}, count(*) FROM {t} GROUP BY {c}"),
        _ => format!("SELECT {c} FROM {t} ORDER BY {c} DESC LIMIT 3"),
    }
}

/// A plain-words rendering of the SQL that keeps every identifier.
fn verbalize(sql: &str) -> String {
    let Ok(q) = parse(sql) else {
        return format!("What does {} return?", sql.trim());
    };
    let s = &q.select;
    if s.compound.is_some() {
        return format!("What does {} return?", sql.trim());
    }
    let items: Vec<&str> = s.items.iter().map(|e| q.text(&e.span)).collect();
    let mut out = String::from("Show ");
    if s.distinct {
        out.push_str("distinct ");
    }
    out.push_str(&items.join(", "));
    if let Some(from) = &s.from {
        let names: Vec<&str> = from.table_names().collect();
        if !names.is_empty() {
            out.push_str(" from ");
            out.push_str(&names.join(" and "));
        }
    }
    for c in &s.clauses {
        let text = q.text(&c.span);
        let (lead, skip) = match c.kind {
            ClauseKind::Where => ("where", 1),
            ClauseKind::GroupBy => ("for each", 2),
            ClauseKind::Having => ("having", 1),
            ClauseKind::OrderBy => ("ordered by", 2),
            ClauseKind::Limit => ("limited to", 1),
        };
        let rest: Vec<&str> = text.split_whitespace().skip(skip).collect();
        out.push_str(&format!(" {lead} {}", rest.join(" ")));
    }
    out.push('?');
    out
}
