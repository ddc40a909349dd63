//! Okapi BM25 ranking over demonstration questions.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::pool::{Demonstration, DemonstrationPool};

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RetrievalError {
    #[error("cannot index an empty pool")]
    EmptyPool,
    #[error("n must be at least 1")]
    ZeroDemos,
    #[error("indexed document {0:?} is not in the pool")]
    IndexMismatch(String),
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Bm25Index {
    pub k1: f64,
    pub b: f64,
    /// Document ids, in insertion order.
    pub ids: Vec<String>,
    pub doc_lengths: Vec<usize>,
    pub avg_dl: f64,
    /// term -> (document index, term frequency), ascending by document.
    pub postings: BTreeMap<String, Vec<(usize, usize)>>,
}

impl Bm25Index {
    pub fn from_documents<'a>(
        docs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, RetrievalError> {
        let mut ids = Vec::new();
        let mut doc_lengths = Vec::new();
        let mut postings: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
        for (d, (id, text)) in docs.into_iter().enumerate() {
            let tokens = tokenize(text);
            doc_lengths.push(tokens.len());
            ids.push(id.to_owned());
            let mut tf: BTreeMap<String, usize> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (t, f) in tf {
                postings.entry(t).or_default().push((d, f));
            }
        }
        if ids.is_empty() {
            return Err(RetrievalError::EmptyPool);
        }
        let avg_dl = doc_lengths.iter().sum::<usize>() as f64 / ids.len() as f64;
        Ok(Self {
            k1: DEFAULT_K1,
            b: DEFAULT_B,
            ids,
            doc_lengths,
            avg_dl,
            postings,
        })
    }

    pub fn with_params(mut self, k1: f64, b: f64) -> Self {
        self.k1 = k1;
        self.b = b;
        self
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`; never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.postings.get(term).map_or(0, Vec::len) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Score of every document; repeated query terms count once.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let mut scores = vec![0.0; self.len()];
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let avg = if self.avg_dl > 0.0 { self.avg_dl } else { 1.0 };
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(term);
            for &(d, tf) in list {
                let tf = tf as f64;
                let norm = 1.0 - self.b + self.b * self.doc_lengths[d] as f64 / avg;
                scores[d] += idf * tf * (self.k1 + 1.0) / (tf + self.k1 * norm);
            }
        }
        scores
    }

    /// Document indices by descending score, ties by ascending id.
    pub fn rank(&self, query: &str) -> Vec<(usize, f64)> {
        let mut ranked: Vec<(usize, f64)> = self.scores(query).into_iter().enumerate().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| self.ids[a.0].cmp(&self.ids[b.0])));
        ranked
    }
}

/// Indexes each demonstration's question.
pub fn build_index(pool: &DemonstrationPool) -> Result<Bm25Index, RetrievalError> {
    Bm25Index::from_documents(pool.iter().map(|d| (d.id.as_str(), d.question.as_str())))
}

/// Indexes each demonstration's SQL text.
pub fn build_sql_index(pool: &DemonstrationPool) -> Result<Bm25Index, RetrievalError> {
    Bm25Index::from_documents(pool.iter().map(|d| (d.id.as_str(), d.sql.as_str())))
}

/// The `n` highest-scoring demonstrations for `question` (all of them,
/// ranked, when the pool is smaller).
pub fn select_demos<'p>(
    index: &Bm25Index,
    pool: &'p DemonstrationPool,
    question: &str,
    n: usize,
) -> Result<Vec<&'p Demonstration>, RetrievalError> {
    if pool.is_empty() || index.is_empty() {
        return Err(RetrievalError::EmptyPool);
    }
    if n == 0 {
        return Err(RetrievalError::ZeroDemos);
    }
    let by_id: BTreeMap<&str, &Demonstration> = pool.iter().map(|d| (d.id.as_str(), d)).collect();
    index
        .rank(question)
        .into_iter()
        .take(n)
        .map(|(d, _)| {
            let id = &index.ids[d];
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| RetrievalError::IndexMismatch(id.clone()))
        })
        .collect()
}
