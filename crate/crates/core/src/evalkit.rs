//! Execution-match evaluation against SQLite databases.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{parse_sql_completion, render_text2sql_prompt, Gateway, LlmRequest, Shot};
use crate::pool::DemonstrationPool;
use crate::retrieval::{build_index, select_demos};
use crate::schema::DatabaseSchema;
use crate::sqlkit::{classify_hardness, extract_template, parse, substitute_values, Hardness};

pub const DEFAULT_TIMEOUT_MS: u64 = 5000;
/// Relative tolerance for comparing floating-point cells.
pub const FLOAT_RTOL: f64 = 1e-6;
pub const UNPARSED: &str = "<unparsed>";

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl Value {
    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Integer(_) | Value::Real(_) => 1,
            Value::Text(_) => 2,
            Value::Blob(_) => 3,
        }
    }

    fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Integer(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    fn order(&self, other: &Value) -> Ordering {
        match (self, other) {
            (Value::Integer(a), Value::Integer(b)) => a.cmp(b),
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (Value::Blob(a), Value::Blob(b)) => a.cmp(b),
            _ => match (self.as_f64(), other.as_f64()) {
                (Some(a), Some(b)) => a.total_cmp(&b),
                _ => self.rank().cmp(&other.rank()),
            },
        }
    }

    /// Exact equality, except numbers compare with [`FLOAT_RTOL`] when
    /// either side is a float.
    pub fn matches(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Integer(a), Value::Integer(b)) => a == b,
            (Value::Real(_), _) | (_, Value::Real(_)) => match (self.as_f64(), other.as_f64()) {
                (Some(a), Some(b)) => {
                    a == b || (a - b).abs() <= FLOAT_RTOL * a.abs().max(b.abs())
                }
                _ => false,
            },
            _ => self == other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultTable {
    pub columns: usize,
    pub rows: Vec<Vec<Value>>,
    /// The query had a top-level ORDER BY.
    pub ordered: bool,
}

impl ResultTable {
    /// Compares as sequences when `ordered`, otherwise as multisets.
    pub fn matches(&self, other: &ResultTable, ordered: bool) -> bool {
        if self.columns != other.columns || self.rows.len() != other.rows.len() {
            return false;
        }
        let row_eq = |a: &Vec<Value>, b: &Vec<Value>| a.iter().zip(b).all(|(x, y)| x.matches(y));
        if ordered {
            return self.rows.iter().zip(&other.rows).all(|(a, b)| row_eq(a, b));
        }
        let sorted = |rows: &[Vec<Value>]| {
            let mut r = rows.to_vec();
            r.sort_by(|a, b| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| x.order(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(Ordering::Equal)
            });
            r
        };
        sorted(&self.rows)
            .iter()
            .zip(&sorted(&other.rows))
            .all(|(a, b)| row_eq(a, b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecErrorKind {
    Syntax,
    Runtime,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind:?} error: {message}")]
pub struct ExecutionError {
    pub kind: ExecErrorKind,
    pub message: String,
}

impl ExecutionError {
    fn new(kind: ExecErrorKind, e: impl ToString) -> Self {
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

fn gold_is_ordered(sql: &str) -> bool {
    parse(sql).is_ok_and(|q| q.select.has_order_by())
}

/// Runs one query on a read-only connection, giving up after `timeout_ms`.
pub fn execute_sql(db_path: &Path, sql: &str, timeout_ms: u64) -> Result<ResultTable, ExecutionError> {
    if !db_path.is_file() {
        return Err(ExecutionError::new(
            ExecErrorKind::Runtime,
            format!("database {} does not exist", db_path.display()),
        ));
    }
    let conn = Connection::open_with_flags(
        db_path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
    .map_err(|e| ExecutionError::new(ExecErrorKind::Runtime, e))?;
    let deadline = Instant::now() + Duration::from_millis(timeout_ms);
    conn.progress_handler(1000, Some(move || Instant::now() > deadline));

    let timeout_or = |kind: ExecErrorKind, e: rusqlite::Error| {
        if e.sqlite_error_code() == Some(rusqlite::ErrorCode::OperationInterrupted) {
            ExecutionError::new(ExecErrorKind::Timeout, format!("exceeded {timeout_ms} ms"))
        } else {
            ExecutionError::new(kind, e)
        }
    };
    let mut stmt = conn
        .prepare(sql)
        .map_err(|e| timeout_or(ExecErrorKind::Syntax, e))?;
    let columns = stmt.column_count();
    let mut rows = Vec::new();
    let mut cursor = stmt
        .query([])
        .map_err(|e| timeout_or(ExecErrorKind::Runtime, e))?;
    while let Some(row) = cursor
        .next()
        .map_err(|e| timeout_or(ExecErrorKind::Runtime, e))?
    {
        let mut out = Vec::with_capacity(columns);
        for i in 0..columns {
            let v = row
                .get_ref(i)
                .map_err(|e| timeout_or(ExecErrorKind::Runtime, e))?;
            out.push(match v {
                ValueRef::Null => Value::Null,
                ValueRef::Integer(i) => Value::Integer(i),
                ValueRef::Real(r) => Value::Real(r),
                ValueRef::Text(t) => Value::Text(String::from_utf8_lossy(t).into_owned()),
                ValueRef::Blob(b) => Value::Blob(b.to_vec()),
            });
        }
        rows.push(out);
    }
    Ok(ResultTable {
        columns,
        rows,
        ordered: gold_is_ordered(sql),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    WithValues,
    WithoutValues,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold SQL failed: {0}")]
    GoldExecution(ExecutionError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no database named {0:?}")]
    MissingDatabase(String),
    #[error("eval set line {line}: {message}")]
    EvalSet { line: usize, message: String },
    #[error("reading {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Retrieval(#[from] crate::retrieval::RetrievalError),
}

/// In without-values mode the gold literals are first substituted into the
/// prediction. A prediction that fails to run never matches.
pub fn execution_match(
    pred_sql: &str,
    gold_sql: &str,
    db_path: &Path,
    mode: MatchMode,
    timeout_ms: u64,
) -> Result<bool, EvalError> {
    let gold = execute_sql(db_path, gold_sql, timeout_ms).map_err(EvalError::GoldExecution)?;
    let pred_sql = match mode {
        MatchMode::WithValues => pred_sql.to_owned(),
        MatchMode::WithoutValues => substitute_values(pred_sql, gold_sql)
            .map(|s| s.sql)
            .unwrap_or_else(|_| pred_sql.to_owned()),
    };
    Ok(match execute_sql(db_path, &pred_sql, timeout_ms) {
        Ok(pred) => pred.matches(&gold, gold.ordered),
        Err(e) => {
            log::debug!("prediction failed: {e}");
            false
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalExample {
    pub db_id: String,
    pub question: String,
    pub sql: String,
}

/// Parses a JSONL eval set; blank lines are skipped.
pub fn parse_eval_set(text: &str) -> Result<Vec<EvalExample>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::EvalSet {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_eval_set(path: &Path) -> Result<Vec<EvalExample>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_eval_set(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub timeout_ms: u64,
    pub shots: usize,
    pub temperature: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            timeout_ms: DEFAULT_TIMEOUT_MS,
            shots: crate::llm::DEMO_SHOTS,
            temperature: crate::llm::DEFAULT_TEMPERATURE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExampleResult {
    pub db_id: String,
    pub question: String,
    pub gold: String,
    pub predicted: Option<String>,
    pub hardness: Hardness,
    pub with_values: bool,
    pub without_values: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Bucket {
    pub n: usize,
    pub ex_with_values: f64,
    pub ex_without_values: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub ex_with_values: f64,
    pub ex_without_values: f64,
    pub by_hardness: BTreeMap<Hardness, Bucket>,
    pub template_census: BTreeMap<String, usize>,
    pub errors: usize,
    pub examples: Vec<ExampleResult>,
}

fn fraction(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

impl EvalReport {
    pub fn from_results(examples: Vec<ExampleResult>, template_census: BTreeMap<String, usize>) -> Self {
        let n = examples.len();
        let mut by_hardness = BTreeMap::new();
        for level in Hardness::ALL {
            let in_level: Vec<&ExampleResult> = examples.iter().filter(|e| e.hardness == level).collect();
            if in_level.is_empty() {
                continue;
            }
            let k = in_level.len();
            by_hardness.insert(
                level,
                Bucket {
                    n: k,
                    ex_with_values: fraction(in_level.iter().filter(|e| e.with_values).count(), k),
                    ex_without_values: fraction(in_level.iter().filter(|e| e.without_values).count(), k),
                },
            );
        }
        EvalReport {
            n,
            ex_with_values: fraction(examples.iter().filter(|e| e.with_values).count(), n),
            ex_without_values: fraction(examples.iter().filter(|e| e.without_values).count(), n),
            by_hardness,
            template_census,
            errors: examples.iter().filter(|e| e.error.is_some()).count(),
            examples,
        }
    }

    /// Plain-text summary, one row per hardness level plus a total.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:>6} {:>10} {:>13}", "level", "n", "EX", "EX w/o values");
        for (level, b) in &self.by_hardness {
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>10.4} {:>13.4}",
                level.as_str(),
                b.n,
                b.ex_with_values,
                b.ex_without_values
            );
        }
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>10.4} {:>13.4}",
            "all", self.n, self.ex_with_values, self.ex_without_values
        );
        out
    }
}

/// Template -> number of demonstrations using it.
pub fn template_census(pool: &DemonstrationPool) -> BTreeMap<String, usize> {
    let mut census = BTreeMap::new();
    for d in pool.iter() {
        let key = extract_template(&d.sql).map_or_else(|_| UNPARSED.to_owned(), |t| t.text);
        *census.entry(key).or_insert(0) += 1;
    }
    census
}

/// Generates SQL for every example with BM25-selected demonstrations from
/// `pool` and scores it in both modes.
pub fn evaluate(
    eval_set: &[EvalExample],
    pool: &DemonstrationPool,
    databases: &[DatabaseSchema],
    gateway: &Gateway,
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if eval_set.is_empty() {
        return Err(EvalError::InvalidArgument("eval set is empty".into()));
    }
    if config.shots == 0 {
        return Err(EvalError::InvalidArgument("shots must be at least 1".into()));
    }
    let by_id: BTreeMap<&str, &DatabaseSchema> =
        databases.iter().map(|d| (d.db_id.as_str(), d)).collect();
    for ex in eval_set {
        if !by_id.contains_key(ex.db_id.as_str()) {
            return Err(EvalError::MissingDatabase(ex.db_id.clone()));
        }
    }
    let index = build_index(pool)?;

    let results: Vec<ExampleResult> = eval_set
        .par_iter()
        .map(|ex| {
            let db = by_id[ex.db_id.as_str()];
            let hardness = classify_hardness(&ex.sql).unwrap_or_else(|e| {
                log::warn!("gold SQL does not parse ({e}); bucketed as extra: {}", ex.sql);
                Hardness::Extra
            });
            let mut result = ExampleResult {
                db_id: ex.db_id.clone(),
                question: ex.question.clone(),
                gold: ex.sql.clone(),
                predicted: None,
                hardness,
                with_values: false,
                without_values: false,
                error: None,
            };
            let outcome = (|| -> Result<(), String> {
                let demos = select_demos(&index, pool, &ex.question, config.shots)
                    .map_err(|e| e.to_string())?;
                let shots: Vec<Shot<'_>> = demos.iter().map(|d| Shot::from(*d)).collect();
                let prompt = render_text2sql_prompt(db, &ex.question, &shots);
                let request = LlmRequest::new(prompt.text).with_temperature(config.temperature);
                let text = gateway
                    .complete(&request)
                    .map_err(|e| e.to_string())?
                    .swap_remove(0);
                let pred = parse_sql_completion(&text);
                result.predicted = Some(pred.clone());
                for (mode, slot) in [
                    (MatchMode::WithValues, &mut result.with_values),
                    (MatchMode::WithoutValues, &mut result.without_values),
                ] {
                    *slot = execution_match(&pred, &ex.sql, &db.source_path, mode, config.timeout_ms)
                        .map_err(|e| e.to_string())?;
                }
                Ok(())
            })();
            if let Err(e) = outcome {
                log::warn!("example {:?} on {}: {e}", ex.question, ex.db_id);
                result.error = Some(e);
            }
            result
        })
        .collect();
    Ok(EvalReport::from_results(results, template_census(pool)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("music.sqlite");
        let conn = Connection::open(&path).unwrap();
        conn.execute_batch(
            "CREATE TABLE singer (id INTEGER PRIMARY KEY, name TEXT, age INT, score REAL);
             INSERT INTO singer VALUES (1, 'Ann', 30, 1.5), (2, 'Bo', 25, NULL), (3, 'Cy', 41, 2.25);",
        )
        .unwrap();
        (dir, path)
    }

    #[test]
    fn executes_queries() {
        let (_d, db) = fixture();
        let t = execute_sql(&db, "SELECT count(*) FROM singer", 1000).unwrap();
        assert_eq!(t.rows, vec![vec![Value::Integer(3)]]);
        let t = execute_sql(&db, "SELECT 1", 1000).unwrap();
        assert_eq!((t.columns, t.rows.len()), (1, 1));
        assert_eq!(
            execute_sql(&db, "SELEC name FROM singer", 1000).unwrap_err().kind,
            ExecErrorKind::Syntax
        );
        assert_eq!(
            execute_sql(&db, "SELECT nope FROM singer", 1000).unwrap_err().kind,
            ExecErrorKind::Syntax
        );
    }

    #[test]
    fn long_query_times_out() {
        let (_d, db) = fixture();
        let sql = "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) SELECT count(*) FROM c";
        assert_eq!(execute_sql(&db, sql, 50).unwrap_err().kind, ExecErrorKind::Timeout);
    }

    #[test]
    fn read_only() {
        let (_d, db) = fixture();
        assert!(execute_sql(&db, "DELETE FROM singer", 1000).is_err());
        assert_eq!(
            execute_sql(&db, "SELECT count(*) FROM singer", 1000).unwrap().rows[0][0],
            Value::Integer(3)
        );
    }

    #[test]
    fn match_modes() {
        let (_d, db) = fixture();
        let gold = "SELECT name FROM singer WHERE age > 26";
        for mode in [MatchMode::WithValues, MatchMode::WithoutValues] {
            assert!(execution_match(gold, gold, &db, mode, 1000).unwrap());
        }
        let pred = "SELECT name FROM singer WHERE age > 35";
        assert!(!execution_match(pred, gold, &db, MatchMode::WithValues, 1000).unwrap());
        assert!(execution_match(pred, gold, &db, MatchMode::WithoutValues, 1000).unwrap());
        assert!(!execution_match("SELECT bogus", gold, &db, MatchMode::WithValues, 1000).unwrap());
        assert!(matches!(
            execution_match(gold, "SELECT bogus", &db, MatchMode::WithValues, 1000),
            Err(EvalError::GoldExecution(_))
        ));
    }

    #[test]
    fn order_matters_only_with_order_by() {
        let (_d, db) = fixture();
        let asc = "SELECT name FROM singer ORDER BY age";
        let desc = "SELECT name FROM singer ORDER BY age DESC";
        assert!(execution_match(desc, "SELECT name FROM singer", &db, MatchMode::WithValues, 1000).unwrap());
        assert!(!execution_match(desc, asc, &db, MatchMode::WithValues, 1000).unwrap());
    }

    #[test]
    fn value_comparison() {
        assert!(Value::Real(1.0).matches(&Value::Integer(1)));
        assert!(Value::Real(1.0).matches(&Value::Real(1.0 + 1e-9)));
        assert!(!Value::Real(1.0).matches(&Value::Real(1.001)));
        assert!(!Value::Null.matches(&Value::Text(String::new())));
        assert!(!Value::Text("1".into()).matches(&Value::Integer(1)));
    }

    #[test]
    fn bag_comparison_counts_duplicates() {
        let t = |rows: Vec<i64>| ResultTable {
            columns: 1,
            rows: rows.into_iter().map(|v| vec![Value::Integer(v)]).collect(),
            ordered: false,
        };
        assert!(t(vec![1, 2, 2]).matches(&t(vec![2, 1, 2]), false));
        assert!(!t(vec![1, 1, 2]).matches(&t(vec![1, 2, 2]), false));
        assert!(!t(vec![1, 2]).matches(&t(vec![2, 1]), true));
    }

    #[test]
    fn eval_set_parsing() {
        let set = parse_eval_set("{\"db_id\":\"a\",\"question\":\"q\",\"sql\":\"SELECT 1\"}\n\n").unwrap();
        assert_eq!(set.len(), 1);
        assert!(matches!(
            parse_eval_set("{\"db_id\":\"a\"}"),
            Err(EvalError::EvalSet { line: 1, .. })
        ));
    }

    #[test]
    fn census_buckets_unparsed() {
        use crate::pool::Demonstration;
        let mut pool = DemonstrationPool::new();
        for (i, sql) in ["SELECT a FROM t", "SELECT b FROM u", "SELECT count(*) FROM t", "garbage"]
            .iter()
            .enumerate()
        {
            pool.dedup_insert(Demonstration::labeled(format!("{i}"), "db", "q", *sql));
        }
        let c = template_census(&pool);
        assert_eq!(c["SELECT * FROM *"], 2);
        assert_eq!(c[UNPARSED], 1);
        assert_eq!(c.values().sum::<usize>(), 4);
    }
}
