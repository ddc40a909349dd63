//! Demonstrations and the demonstration pool, persisted as JSONL.
//!
//! One JSON object per line:
//! `{"id", "db_id", "question", "sql", "origin": "labeled"|"synthesized", "turn", "validated"}`.
//! Pool metadata (turn counter, config digest) lives in a sidecar file next to
//! the pool, `<pool>.meta.json`, so every pool line stays a demonstration.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sqlkit::normalize_sql;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Labeled,
    Synthesized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Demonstration {
    pub id: String,
    pub db_id: String,
    pub question: String,
    pub sql: String,
    pub origin: Origin,
    pub turn: u32,
    pub validated: bool,
}

impl Demonstration {
    pub fn labeled(
        id: impl Into<String>,
        db_id: impl Into<String>,
        question: impl Into<String>,
        sql: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            db_id: db_id.into(),
            question: question.into(),
            sql: sql.into(),
            origin: Origin::Labeled,
            turn: 0,
            validated: true,
        }
    }

    /// Checks the per-demonstration invariants.
    pub fn check(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.question.trim().is_empty() {
            return Err("empty question".into());
        }
        if self.sql.trim().is_empty() {
            return Err("empty sql".into());
        }
        if self.origin == Origin::Labeled && self.turn != 0 {
            return Err(format!("labeled demonstration with turn {}", self.turn));
        }
        Ok(())
    }

    pub fn dedup_key(&self) -> DedupKey {
        DedupKey {
            db_id: self.db_id.clone(),
            sql: normalize_sql(&self.sql),
            question: self.question.clone(),
        }
    }
}

/// (db_id, normalized SQL, question).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DedupKey {
    pub db_id: String,
    pub sql: String,
    pub question: String,
}

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: duplicate (db_id, sql, question) of line {first}")]
    DuplicateTriple { line: usize, first: usize },
    #[error("line {line}: {reason}")]
    InvalidDemo { line: usize, reason: String },
    #[error("metadata {path}: {message}")]
    Meta { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolMeta {
    pub turn: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DemonstrationPool {
    demos: Vec<Demonstration>,
    ids: HashSet<String>,
    keys: HashSet<DedupKey>,
    turn: u32,
    config_digest: Option<String>,
}

impl DemonstrationPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn demonstrations(&self) -> &[Demonstration] {
        &self.demos
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Demonstration> {
        self.demos.iter()
    }

    pub fn get(&self, index: usize) -> Option<&Demonstration> {
        self.demos.get(index)
    }

    pub fn turn(&self) -> u32 {
        self.turn
    }

    /// Raises the turn counter; it never goes backwards.
    pub fn advance_turn(&mut self, turn: u32) {
        self.turn = self.turn.max(turn);
    }

    pub fn config_digest(&self) -> Option<&str> {
        self.config_digest.as_deref()
    }

    pub fn set_config_digest(&mut self, digest: impl Into<String>) {
        self.config_digest = Some(digest.into());
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    pub fn contains(&self, demo: &Demonstration) -> bool {
        self.keys.contains(&demo.dedup_key())
    }

    /// Inserts unless a demonstration with the same (db_id, normalized SQL,
    /// question) is present. A clashing id on a fresh triple is made unique
    /// with a numeric suffix.
    pub fn dedup_insert(&mut self, mut demo: Demonstration) -> bool {
        let key = demo.dedup_key();
        if self.keys.contains(&key) {
            return false;
        }
        if self.ids.contains(&demo.id) {
            let base = demo.id.clone();
            let mut n = 2;
            while self.ids.contains(&format!("{base}-{n}")) {
                n += 1;
            }
            demo.id = format!("{base}-{n}");
        }
        self.turn = self.turn.max(demo.turn);
        self.ids.insert(demo.id.clone());
        self.keys.insert(key);
        self.demos.push(demo);
        true
    }

    /// Parses JSONL text. Blank lines are skipped; line numbers are 1-based.
    pub fn from_jsonl(text: &str) -> Result<Self, PoolError> {
        let mut pool = Self::new();
        let mut first_seen = std::collections::HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let demo: Demonstration = serde_json::from_str(raw).map_err(|e| PoolError::Parse {
                line,
                message: e.to_string(),
            })?;
            demo.check()
                .map_err(|reason| PoolError::InvalidDemo { line, reason })?;
            if pool.ids.contains(&demo.id) {
                return Err(PoolError::DuplicateId { line, id: demo.id });
            }
            let key = demo.dedup_key();
            if let Some(first) = first_seen.get(&key) {
                return Err(PoolError::DuplicateTriple {
                    line,
                    first: *first,
                });
            }
            first_seen.insert(key, line);
            let inserted = pool.dedup_insert(demo);
            debug_assert!(inserted);
        }
        Ok(pool)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for d in &self.demos {
            out.push_str(&serde_json::to_string(d).expect("demonstration serializes"));
            out.push('\n');
        }
        out
    }

    pub fn meta(&self) -> PoolMeta {
        PoolMeta {
            turn: self.turn,
            config_digest: self.config_digest.clone(),
        }
    }

    fn apply_meta(&mut self, meta: PoolMeta) {
        self.turn = self.turn.max(meta.turn);
        self.config_digest = meta.config_digest;
    }
}

impl<'a> IntoIterator for &'a DemonstrationPool {
    type Item = &'a Demonstration;
    type IntoIter = std::slice::Iter<'a, Demonstration>;

    fn into_iter(self) -> Self::IntoIter {
        self.demos.iter()
    }
}

pub fn meta_path(pool_path: &Path) -> PathBuf {
    let mut name = pool_path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn load_pool(path: &Path) -> Result<DemonstrationPool, PoolError> {
    let text = fs::read_to_string(path).map_err(|source| PoolError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut pool = DemonstrationPool::from_jsonl(&text)?;
    let meta_file = meta_path(path);
    if meta_file.is_file() {
        let meta_text = fs::read_to_string(&meta_file).map_err(|source| PoolError::Io {
            path: meta_file.clone(),
            source,
        })?;
        let meta: PoolMeta = serde_json::from_str(&meta_text).map_err(|e| PoolError::Meta {
            path: meta_file.clone(),
            message: e.to_string(),
        })?;
        pool.apply_meta(meta);
    }
    Ok(pool)
}

pub fn save_pool(pool: &DemonstrationPool, path: &Path) -> Result<(), PoolError> {
    let write = |p: &Path, body: &str| -> Result<(), PoolError> {
        let mut f = fs::File::create(p).map_err(|source| PoolError::Io {
            path: p.to_path_buf(),
            source,
        })?;
        f.write_all(body.as_bytes()).map_err(|source| PoolError::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    write(path, &pool.to_jsonl())?;
    let meta = serde_json::to_string_pretty(&pool.meta()).expect("meta serializes");
    write(&meta_path(path), &meta)
}
