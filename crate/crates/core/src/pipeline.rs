//! The growth loop: cluster the pool, sample cross-cluster pairs, fuse them
//! into new SQL, write questions for it, validate, insert.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clustering::{default_k, kmeans, ClusterError, ClusterModel, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::embedding::{embed_all, EmbedError, Encoder, Pca};
use crate::evalkit::{execute_sql, DEFAULT_TIMEOUT_MS};
use crate::geometry::{compute_dm, DmOptions};
use crate::llm::{
    parse_question_completion, parse_sql_completion, render_fusion_prompt, render_question_prompt,
    render_scratch_sql_prompt, render_text2sql_prompt, Gateway, LlmRequest, Shot, DEMO_SHOTS,
};
use crate::pool::{Demonstration, DemonstrationPool, Origin};
use crate::retrieval::{build_index, build_sql_index, select_demos, Bm25Index};
use crate::schema::DatabaseSchema;
use crate::sqlkit::parse;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuseConfig {
    pub turns: u32,
    pub sqls_per_db: usize,
    pub temperature: f64,
    /// Fusions attempted per turn; the pool size at turn start when unset.
    pub fusion_pairs_per_turn: Option<usize>,
    /// Cluster count; `default_k` of the pool size when unset.
    pub k: Option<usize>,
    pub seed: u64,
    pub validation: bool,
    /// Dimension the embeddings are projected to before measuring diversity.
    pub dm_dim: usize,
    pub timeout_ms: u64,
}

impl Default for FuseConfig {
    fn default() -> Self {
        Self {
            turns: 3,
            sqls_per_db: 8,
            temperature: crate::llm::DEFAULT_TEMPERATURE,
            fusion_pairs_per_turn: None,
            k: None,
            seed: 0,
            validation: true,
            dm_dim: 2,
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }
}

impl FuseConfig {
    /// Defaults for growing a human-labeled pool: a single turn.
    pub fn labeled() -> Self {
        Self {
            turns: 1,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.into()));
        if self.sqls_per_db == 0 {
            return bad("sqls_per_db must be at least 1");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be finite and non-negative");
        }
        if self.k.is_some_and(|k| k < 2) {
            return bad("k must be at least 2");
        }
        if self.dm_dim == 0 {
            return bad("dm_dim must be at least 1");
        }
        Ok(())
    }

    /// Hex SHA-256 of the JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("need at least two non-empty clusters, found {0}")]
    InsufficientClusters(usize),
    #[error("no databases given")]
    NoDatabases,
    #[error("pool has {0} demonstrations, at least 2 are needed")]
    PoolTooSmall(usize),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropReason {
    Parse,
    Question,
    Validation,
    Execution,
    Provider,
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Valid,
    Rejected(DropReason),
}

impl Verdict {
    pub fn is_valid(self) -> bool {
        self == Verdict::Valid
    }
}

/// One sampled pair: pool indices and the clusters they came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FusionDraw {
    pub first: usize,
    pub second: usize,
    pub clusters: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRecord {
    pub first: String,
    pub second: String,
    pub clusters: (usize, usize),
    pub db_id: String,
    pub inserted: Option<String>,
    pub dropped: Option<DropReason>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TurnReport {
    pub turn: u32,
    pub attempted: usize,
    pub parsed: usize,
    pub validated: usize,
    pub inserted: usize,
    pub dm_before: Option<f64>,
    pub dm_after: Option<f64>,
    pub dropped: BTreeMap<DropReason, usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<PairRecord>,
}

impl TurnReport {
    fn drop_item(&mut self, reason: DropReason) {
        *self.dropped.entry(reason).or_insert(0) += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RunReport {
    pub config_digest: String,
    pub turns: Vec<TurnReport>,
    /// Set when a turn could not run; later turns were skipped.
    pub error: Option<String>,
}

impl RunReport {
    /// Items that were attempted but not inserted.
    pub fn failed_items(&self) -> usize {
        self.turns.iter().map(|t| t.attempted - t.inserted).sum()
    }
}

fn rng_for(seed: u64, turn: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(turn as u64);
    rng
}

/// Picks two distinct non-empty clusters uniformly, then one member of each
/// uniformly.
pub fn sample_fusion_pair(model: &ClusterModel, rng: &mut impl Rng) -> Result<FusionDraw, PipelineError> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); model.k];
    for (i, &c) in model.assignments.iter().enumerate() {
        members[c].push(i);
    }
    let live: Vec<usize> = (0..model.k).filter(|&c| !members[c].is_empty()).collect();
    if live.len() < 2 {
        return Err(PipelineError::InsufficientClusters(live.len()));
    }
    let a = rng.random_range(0..live.len());
    let mut b = rng.random_range(0..live.len() - 1);
    if b >= a {
        b += 1;
    }
    let (ca, cb) = (live[a], live[b]);
    let first = members[ca][rng.random_range(0..members[ca].len())];
    let second = members[cb][rng.random_range(0..members[cb].len())];
    assert_ne!(model.assignments[first], model.assignments[second]);
    Ok(FusionDraw {
        first,
        second,
        clusters: (ca, cb),
    })
}

fn shots_for<'p>(index: Option<&Bm25Index>, pool: &'p DemonstrationPool, query: &str) -> Vec<Shot<'p>> {
    index
        .and_then(|ix| select_demos(ix, pool, query, DEMO_SHOTS).ok())
        .map(|ds| ds.into_iter().map(Shot::from).collect())
        .unwrap_or_default()
}

/// Generates SQL for `question` from a 5-shot prompt over `pool`, runs it and
/// `sql` on the database, and accepts when the result bags agree.
pub fn validate_pair(
    db: &DatabaseSchema,
    question: &str,
    sql: &str,
    gateway: &Gateway,
    pool: &DemonstrationPool,
    config: &FuseConfig,
) -> Verdict {
    let index = build_index(pool).ok();
    validate_with(db, question, sql, gateway, pool, index.as_ref(), config)
}

fn validate_with(
    db: &DatabaseSchema,
    question: &str,
    sql: &str,
    gateway: &Gateway,
    pool: &DemonstrationPool,
    index: Option<&Bm25Index>,
    config: &FuseConfig,
) -> Verdict {
    let candidate = match execute_sql(&db.source_path, sql, config.timeout_ms) {
        Ok(t) => t,
        Err(e) => {
            log::debug!("candidate fails on {}: {e}", db.db_id);
            return Verdict::Rejected(DropReason::Execution);
        }
    };
    let prompt = render_text2sql_prompt(db, question, &shots_for(index, pool, question));
    let request = LlmRequest::new(prompt.text).with_temperature(config.temperature);
    let generated = match gateway.complete(&request) {
        Ok(mut texts) => parse_sql_completion(&texts.swap_remove(0)),
        Err(e) => {
            log::warn!("validation call failed: {e}");
            return Verdict::Rejected(DropReason::Provider);
        }
    };
    match execute_sql(&db.source_path, &generated, config.timeout_ms) {
        Ok(t) if t.matches(&candidate, false) => Verdict::Valid,
        _ => Verdict::Rejected(DropReason::Validation),
    }
}


/// A candidate on its way through question synthesis and validation.
struct Item<'a> {
    db: &'a DatabaseSchema,
    sql: Option<String>,
    question: Option<String>,
    parsed: bool,
    dropped: Option<DropReason>,
}

impl<'a> Item<'a> {
    fn from_completion(db: &'a DatabaseSchema, completion: Result<String, DropReason>) -> Self {
        let sql = completion.and_then(|text| {
            let sql = parse_sql_completion(&text);
            parse(&sql).map(|_| sql).map_err(|_| DropReason::Parse)
        });
        match sql {
            Ok(sql) => Item {
                db,
                sql: Some(sql),
                question: None,
                parsed: true,
                dropped: None,
            },
            Err(reason) => Item {
                db,
                sql: None,
                question: None,
                parsed: false,
                dropped: Some(reason),
            },
        }
    }

    fn live(&self) -> Option<&str> {
        match self.dropped {
            None => self.sql.as_deref(),
            Some(_) => None,
        }
    }
}

/// Question synthesis then validation for every item. Each phase finishes
/// for all items before the next starts, so the outcome does not depend on
/// scheduling.
fn synthesize_and_validate(items: &mut [Item<'_>], pool: &DemonstrationPool, gateway: &Gateway, config: &FuseConfig) {
    let sql_index = build_sql_index(pool).ok();
    items.par_iter_mut().for_each(|item| {
        let Some(sql) = item.live() else { return };
        let prompt = render_question_prompt(item.db, sql, &shots_for(sql_index.as_ref(), pool, sql));
        let request = LlmRequest::new(prompt.text).with_temperature(config.temperature);
        match gateway.complete(&request) {
            Ok(mut texts) => {
                let q = parse_question_completion(&texts.swap_remove(0));
                if q.is_empty() {
                    item.dropped = Some(DropReason::Question);
                } else {
                    item.question = Some(q);
                }
            }
            Err(e) => {
                log::warn!("question synthesis failed: {e}");
                item.dropped = Some(DropReason::Provider);
            }
        }
    });
    if !config.validation {
        return;
    }
    let index = build_index(pool).ok();
    items.par_iter_mut().for_each(|item| {
        let (Some(sql), Some(q)) = (item.live(), item.question.as_deref()) else {
            return;
        };
        if let Verdict::Rejected(reason) = validate_with(item.db, q, sql, gateway, pool, index.as_ref(), config) {
            item.dropped = Some(reason);
        }
    });
}

/// Inserts surviving items in order. Returns, per item, the id it was
/// stored under or why it was dropped.
fn insert_items(
    pool: &mut DemonstrationPool,
    items: Vec<Item<'_>>,
    turn: u32,
    id_prefix: &str,
    config: &FuseConfig,
    report: &mut TurnReport,
) -> Vec<Result<String, DropReason>> {
    let mut outcomes = Vec::with_capacity(items.len());
    for (i, item) in items.into_iter().enumerate() {
        report.attempted += 1;
        report.parsed += item.parsed as usize;
        let (Some(sql), Some(question), None) = (item.sql, item.question, item.dropped) else {
            let reason = item.dropped.unwrap_or(DropReason::Question);
            report.drop_item(reason);
            outcomes.push(Err(reason));
            continue;
        };
        if config.validation {
            report.validated += 1;
        }
        let demo = Demonstration {
            id: format!("{id_prefix}{i}"),
            db_id: item.db.db_id.clone(),
            question,
            sql,
            origin: Origin::Synthesized,
            turn,
            validated: config.validation,
        };
        if pool.dedup_insert(demo) {
            report.inserted += 1;
            outcomes.push(Ok(pool.demonstrations()[pool.len() - 1].id.clone()));
        } else {
            report.drop_item(DropReason::Duplicate);
            outcomes.push(Err(DropReason::Duplicate));
        }
    }
    outcomes
}

/// Builds a pool from the databases alone: `sqls_per_db` scratch SQLs per
/// database, a question for each, validation. Demonstrations get turn 1.
pub fn bootstrap_from_scratch(
    databases: &[DatabaseSchema],
    config: &FuseConfig,
    gateway: &Gateway,
) -> Result<(DemonstrationPool, TurnReport), PipelineError> {
    config.check()?;
    if databases.is_empty() {
        return Err(PipelineError::NoDatabases);
    }
    let mut pool = DemonstrationPool::new();
    let mut report = TurnReport {
        turn: 1,
        ..TurnReport::default()
    };
    for db in databases {
        let prompt = render_scratch_sql_prompt(db);
        for w in &prompt.warnings {
            log::warn!("{w}");
        }
        let request = LlmRequest::new(prompt.text)
            .with_n(config.sqls_per_db)
            .with_temperature(config.temperature);
        let completions: Vec<Result<String, DropReason>> = match gateway.complete(&request) {
            Ok(texts) => texts.into_iter().map(Ok).collect(),
            Err(e) => {
                log::warn!("scratch synthesis for {} failed: {e}", db.db_id);
                vec![Err(DropReason::Provider); config.sqls_per_db]
            }
        };
        let mut items: Vec<Item<'_>> = completions.into_iter().map(|c| Item::from_completion(db, c)).collect();
        synthesize_and_validate(&mut items, &pool, gateway, config);
        insert_items(&mut pool, items, 1, &format!("boot-{}-", db.db_id), config, &mut report);
    }
    pool.advance_turn(1);
    Ok((pool, report))
}

/// Embeddings keyed by question text, so unchanged members are not sent to
/// the encoder again.
#[derive(Default)]
struct EmbedCache(std::collections::HashMap<String, Vec<f64>>);

impl EmbedCache {
    fn embed(&mut self, encoder: &dyn Encoder, pool: &DemonstrationPool) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut missing: Vec<&str> = pool
            .iter()
            .map(|d| d.question.as_str())
            .filter(|q| !self.0.contains_key(*q))
            .collect();
        missing.sort_unstable();
        missing.dedup();
        if !missing.is_empty() {
            let vectors = embed_all(encoder, &missing)?;
            for (q, v) in missing.into_iter().zip(vectors) {
                self.0.insert(q.to_owned(), v);
            }
        }
        Ok(pool.iter().map(|d| self.0[&d.question].clone()).collect())
    }
}

fn diversity(pca: Option<&Pca>, vectors: &[Vec<f64>]) -> Option<f64> {
    let pca = pca?;
    let points: Vec<Vec<f64>> = vectors.iter().map(|v| pca.project(v)).collect::<Result<_, _>>().ok()?;
    match compute_dm(&points, &DmOptions::default()) {
        Ok(r) => Some(r.dm),
        Err(e) => {
            log::debug!("diversity not measurable: {e}");
            None
        }
    }
}

fn distinct_vectors(vectors: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = vectors.iter().map(|v| v.iter().map(|x| x.to_bits()).collect()).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

fn cluster(vectors: &[Vec<f64>], config: &FuseConfig, turn: u32) -> Result<ClusterModel, PipelineError> {
    let n = vectors.len();
    let k = config.k.unwrap_or_else(|| default_k(n)).min(n).min(distinct_vectors(vectors));
    if k < 2 {
        return Err(PipelineError::InsufficientClusters(k));
    }
    Ok(kmeans(vectors, k, turn_seed(config.seed, turn), DEFAULT_MAX_ITERS, DEFAULT_TOL)?)
}

/// Seed used for clustering in a given turn.
pub fn turn_seed(seed: u64, turn: u32) -> u64 {
    seed ^ (turn as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// One growth turn on a copy of `pool`. The turn number is one past the
/// pool's counter. Diversity is measured with a projection fitted to `pool`.
pub fn run_turn(
    pool: &DemonstrationPool,
    databases: &[DatabaseSchema],
    config: &FuseConfig,
    gateway: &Gateway,
    encoder: &dyn Encoder,
) -> Result<(DemonstrationPool, TurnReport), PipelineError> {
    config.check()?;
    let mut cache = EmbedCache::default();
    let vectors = cache.embed(encoder, pool)?;
    let pca = Pca::fit(&vectors, config.dm_dim, config.seed).ok();
    turn_inner(pool, databases, config, gateway, encoder, pca.as_ref(), &mut cache)
}

fn turn_inner(
    pool: &DemonstrationPool,
    databases: &[DatabaseSchema],
    config: &FuseConfig,
    gateway: &Gateway,
    encoder: &dyn Encoder,
    pca: Option<&Pca>,
    cache: &mut EmbedCache,
) -> Result<(DemonstrationPool, TurnReport), PipelineError> {
    if databases.is_empty() {
        return Err(PipelineError::NoDatabases);
    }
    if pool.len() < 2 {
        return Err(PipelineError::PoolTooSmall(pool.len()));
    }
    let turn = pool.turn() + 1;
    let vectors = cache.embed(encoder, pool)?;
    let model = cluster(&vectors, config, turn)?;

    let mut rng = rng_for(config.seed, turn);
    let budget = config.fusion_pairs_per_turn.unwrap_or(pool.len());
    let mut draws = Vec::with_capacity(budget);
    for _ in 0..budget {
        let draw = sample_fusion_pair(&model, &mut rng)?;
        let db = &databases[rng.random_range(0..databases.len())];
        draws.push((draw, db));
    }

    let demos = pool.demonstrations();
    let completions: Vec<Result<String, DropReason>> = draws
        .par_iter()
        .map(|(d, db)| {
            let prompt = render_fusion_prompt(db, &demos[d.first].sql, &demos[d.second].sql);
            let request = LlmRequest::new(prompt.text).with_temperature(config.temperature);
            gateway.complete(&request).map(|mut t| t.swap_remove(0)).map_err(|e| {
                log::warn!("fusion failed: {e}");
                DropReason::Provider
            })
        })
        .collect();
    let mut items: Vec<Item<'_>> = draws
        .iter()
        .zip(completions)
        .map(|((_, db), c)| Item::from_completion(db, c))
        .collect();
    synthesize_and_validate(&mut items, pool, gateway, config);

    let mut grown = pool.clone();
    let mut report = TurnReport {
        turn,
        dm_before: diversity(pca, &vectors),
        ..TurnReport::default()
    };
    let outcomes = insert_items(&mut grown, items, turn, &format!("syn-t{turn}-"), config, &mut report);
    report.pairs = draws
        .iter()
        .zip(outcomes)
        .map(|((d, db), outcome)| PairRecord {
            first: demos[d.first].id.clone(),
            second: demos[d.second].id.clone(),
            clusters: d.clusters,
            db_id: db.db_id.clone(),
            inserted: outcome.as_ref().ok().cloned(),
            dropped: outcome.err(),
        })
        .collect();
    grown.advance_turn(turn);
    report.dm_after = if report.inserted == 0 {
        report.dm_before
    } else {
        diversity(pca, &cache.embed(encoder, &grown)?)
    };
    log::info!(
        "turn {turn}: {} attempted, {} inserted, dm {:?} -> {:?}",
        report.attempted,
        report.inserted,
        report.dm_before,
        report.dm_after
    );
    Ok((grown, report))
}

/// Runs `config.turns` turns starting from `initial`. An empty initial pool
/// is bootstrapped from the databases first, which counts as turn 1. A turn
/// that cannot run ends the loop; the pool so far is returned with the error
/// recorded in the report.
pub fn run(
    config: &FuseConfig,
    initial: &DemonstrationPool,
    databases: &[DatabaseSchema],
    gateway: &Gateway,
    encoder: &dyn Encoder,
) -> Result<(DemonstrationPool, RunReport), PipelineError> {
    config.check()?;
    if databases.is_empty() {
        return Err(PipelineError::NoDatabases);
    }
    let digest = config.digest();
    let mut report = RunReport {
        config_digest: digest.clone(),
        ..RunReport::default()
    };
    let mut pool = initial.clone();
    if config.turns == 0 {
        pool.set_config_digest(digest);
        return Ok((pool, report));
    }
    let mut remaining = config.turns;
    if pool.is_empty() {
        let (boot, r) = bootstrap_from_scratch(databases, config, gateway)?;
        pool = boot;
        report.turns.push(r);
        remaining -= 1;
    }
    let mut cache = EmbedCache::default();
    let pca = Pca::fit(&cache.embed(encoder, &pool)?, config.dm_dim, config.seed).ok();
    for _ in 0..remaining {
        match turn_inner(&pool, databases, config, gateway, encoder, pca.as_ref(), &mut cache) {
            Ok((next, r)) => {
                pool = next;
                report.turns.push(r);
            }
            Err(e) => {
                log::error!("turn {} aborted: {e}", pool.turn() + 1);
                report.error = Some(e.to_string());
                break;
            }
        }
    }
    pool.set_config_digest(digest);
    Ok((pool, report))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::embedding::BuiltinEncoder;
    use crate::llm::{LlmError, MockProvider};

    fn concert() -> (tempfile::TempDir, DatabaseSchema) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("concert.sqlite");
        let conn = rusqlite::Connection::open(&path).unwrap();
        conn.execute_batch(
            "CREATE TABLE singer (id INTEGER PRIMARY KEY, name TEXT, age INT, country TEXT);
             INSERT INTO singer VALUES (1, 'Ann', 34, 'FR'), (2, 'Bo', 22, 'US'),
                                       (3, 'Cy', 41, 'US'), (4, 'Di', 29, 'NL');",
        )
        .unwrap();
        drop(conn);
        let db = DatabaseSchema::from_sqlite("concert", &path).unwrap();
        (dir, db)
    }

    fn seed_pool() -> DemonstrationPool {
        let mut pool = DemonstrationPool::new();
        for (i, (q, sql)) in [
            ("List singer names.", "SELECT name FROM singer"),
            ("How many singers are there?", "SELECT count(*) FROM singer"),
            ("Which singers are older than 30?", "SELECT name FROM singer WHERE age > 30"),
            ("How many singers per country?", "SELECT country, count(*) FROM singer GROUP BY country"),
        ]
        .into_iter()
        .enumerate()
        {
            pool.dedup_insert(Demonstration::labeled(format!("d{i}"), "concert", q, sql));
        }
        pool
    }

    fn gateway(mock: MockProvider) -> Gateway {
        Gateway::new(Arc::new(mock))
    }

    fn model(assignments: Vec<usize>, k: usize) -> ClusterModel {
        ClusterModel {
            k,
            centroids: vec![vec![0.0]; k],
            assignments,
            inertia: 0.0,
            seed: 0,
            iterations: 0,
        }
    }

    #[test]
    fn singleton_clusters_give_the_cross_pair() {
        let m = model(vec![0, 1], 2);
        let mut rng = rng_for(1, 1);
        for _ in 0..20 {
            let d = sample_fusion_pair(&m, &mut rng).unwrap();
            assert_eq!(
                (d.first.min(d.second), d.first.max(d.second)),
                (0, 1)
            );
        }
    }

    #[test]
    fn cluster_pairs_are_uniform() {
        let m = model(vec![0, 0, 1, 1, 2, 2], 3);
        let mut rng = rng_for(7, 1);
        let draws = 10_000;
        let mut counts = BTreeMap::new();
        for _ in 0..draws {
            let d = sample_fusion_pair(&m, &mut rng).unwrap();
            let (a, b) = d.clusters;
            assert_ne!(a, b);
            *counts.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 3);
        let p = 1.0 / 3.0;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts.values() {
            assert!((*c as f64 - draws as f64 * p).abs() <= 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn one_cluster_is_insufficient() {
        let m = model(vec![1, 1, 1], 3);
        assert!(matches!(
            sample_fusion_pair(&m, &mut rng_for(0, 0)),
            Err(PipelineError::InsufficientClusters(1))
        ));
    }

    #[test]
    fn validation_verdicts() {
        let (_d, db) = concert();
        let pool = seed_pool();
        let cfg = FuseConfig::default();
        let q = "Who is older than 30?";
        let sql = "SELECT name FROM singer WHERE age > 30";
        let gw = gateway(MockProvider::new(0).with_answers([(q.to_owned(), sql.to_owned())]));
        assert_eq!(validate_pair(&db, q, sql, &gw, &pool, &cfg), Verdict::Valid);

        let gw = gateway(MockProvider::new(0).with_answers([(
            q.to_owned(),
            "SELECT name FROM singer WHERE age > 40".to_owned(),
        )]));
        assert_eq!(
            validate_pair(&db, q, sql, &gw, &pool, &cfg),
            Verdict::Rejected(DropReason::Validation)
        );
        assert_eq!(
            validate_pair(&db, q, "SELECT nope FROM singer", &gw, &pool, &cfg),
            Verdict::Rejected(DropReason::Execution)
        );
    }

    #[test]
    fn bootstrap_inserts_validated_scratch_pairs() {
        let (_d, db) = concert();
        let cfg = FuseConfig {
            sqls_per_db: 2,
            ..FuseConfig::default()
        };
        let (pool, report) = bootstrap_from_scratch(std::slice::from_ref(&db), &cfg, &gateway(MockProvider::new(0))).unwrap();
        assert_eq!(pool.len(), 2);
        assert_eq!(report.inserted, 2);
        assert_eq!(pool.turn(), 1);
        for d in pool.iter() {
            assert!(d.validated);
            assert_eq!((d.origin, d.turn), (Origin::Synthesized, 1));
        }
    }

    #[test]
    fn bootstrap_drops_unparseable_sql() {
        let (_d, db) = concert();
        let cfg = FuseConfig {
            sqls_per_db: 2,
            ..FuseConfig::default()
        };
        let mock = MockProvider::new(0).with_script(vec![Ok(vec![
            " name FROM singer".into(),
            " FROM WHERE (".into(),
        ])]);
        let (pool, report) = bootstrap_from_scratch(std::slice::from_ref(&db), &cfg, &gateway(mock)).unwrap();
        assert_eq!(pool.len(), 1);
        assert_eq!(report.dropped[&DropReason::Parse], 1);
        assert_eq!(report.parsed, 1);
    }

    #[test]
    fn bootstrap_without_validation_keeps_everything_parseable() {
        let (_d, db) = concert();
        let cfg = FuseConfig {
            sqls_per_db: 3,
            validation: false,
            ..FuseConfig::default()
        };
        // The scripted text-to-SQL answers would fail validation.
        let mock = MockProvider::new(0).with_answers([]);
        let (pool, report) = bootstrap_from_scratch(std::slice::from_ref(&db), &cfg, &gateway(mock)).unwrap();
        assert_eq!(pool.len(), 3);
        assert_eq!(report.validated, 0);
        assert!(pool.iter().all(|d| !d.validated));
    }

    #[test]
    fn provider_failures_are_isolated() {
        let (_d, db) = concert();
        let cfg = FuseConfig {
            sqls_per_db: 2,
            ..FuseConfig::default()
        };
        let mock = MockProvider::new(0).with_script(vec![Err(LlmError::malformed("bad"))]);
        let (pool, report) = bootstrap_from_scratch(std::slice::from_ref(&db), &cfg, &gateway(mock)).unwrap();
        assert!(pool.is_empty());
        assert_eq!(report.dropped[&DropReason::Provider], 2);
    }

    #[test]
    fn turn_grows_pool_with_validated_demos() {
        let (_d, db) = concert();
        let pool = seed_pool();
        let cfg = FuseConfig {
            fusion_pairs_per_turn: Some(2),
            seed: 3,
            ..FuseConfig::default()
        };
        let enc = BuiltinEncoder::new(16).unwrap();
        let (grown, report) =
            run_turn(&pool, std::slice::from_ref(&db), &cfg, &gateway(MockProvider::new(3)), &enc).unwrap();
        assert!(grown.len() <= pool.len() + 2);
        assert_eq!(grown.len(), pool.len() + report.inserted);
        assert_eq!(&grown.demonstrations()[..4], pool.demonstrations());
        assert_eq!(grown.turn(), 1);
        for d in &grown.demonstrations()[4..] {
            assert!(d.validated);
            assert_eq!(d.turn, 1);
        }
        assert_eq!(report.pairs.len(), 2);
        for p in &report.pairs {
            assert_ne!(p.clusters.0, p.clusters.1);
        }
    }

    #[test]
    fn duplicates_are_not_inserted() {
        let (_d, db) = concert();
        // Nothing to borrow from the partner, so fusion echoes SQL1 and the
        // mock question equals the stored one.
        let mut pool = DemonstrationPool::new();
        for (i, sql) in ["SELECT name FROM singer", "SELECT age FROM singer", "SELECT country FROM singer"]
            .iter()
            .enumerate()
        {
            let q = format!("Show {} from singer?", &sql[7..sql.find(" FROM").unwrap()]);
            pool.dedup_insert(Demonstration::labeled(format!("d{i}"), "concert", q, *sql));
        }
        let cfg = FuseConfig {
            fusion_pairs_per_turn: Some(4),
            k: Some(3),
            ..FuseConfig::default()
        };
        let enc = BuiltinEncoder::new(16).unwrap();
        let (grown, report) =
            run_turn(&pool, std::slice::from_ref(&db), &cfg, &gateway(MockProvider::new(0)), &enc).unwrap();
        assert_eq!(grown.len(), pool.len());
        assert_eq!(report.dropped[&DropReason::Duplicate], 4);
    }

    #[test]
    fn run_turn_needs_two_demos() {
        let (_d, db) = concert();
        let mut pool = DemonstrationPool::new();
        pool.dedup_insert(Demonstration::labeled("a", "concert", "q", "SELECT 1"));
        let enc = BuiltinEncoder::new(8).unwrap();
        assert!(matches!(
            run_turn(&pool, &[db], &FuseConfig::default(), &gateway(MockProvider::new(0)), &enc),
            Err(PipelineError::PoolTooSmall(1))
        ));
    }

    #[test]
    fn zero_turns_leave_pool_alone() {
        let (_d, db) = concert();
        let pool = seed_pool();
        let cfg = FuseConfig {
            turns: 0,
            ..FuseConfig::default()
        };
        let enc = BuiltinEncoder::new(8).unwrap();
        let (out, report) = run(&cfg, &pool, &[db], &gateway(MockProvider::new(0)), &enc).unwrap();
        assert_eq!(out.demonstrations(), pool.demonstrations());
        assert!(report.turns.is_empty());
    }

    #[test]
    fn labeled_pool_single_turn_shape() {
        let (_d, db) = concert();
        let enc = BuiltinEncoder::new(16).unwrap();
        let (out, report) =
            run(&FuseConfig::labeled(), &seed_pool(), &[db], &gateway(MockProvider::new(0)), &enc).unwrap();
        assert_eq!(out.turn(), 1);
        assert_eq!(report.turns.len(), 1);
        assert!(out.iter().all(|d| match d.origin {
            Origin::Labeled => d.turn == 0,
            Origin::Synthesized => d.turn == 1,
        }));
        assert_eq!(out.config_digest(), Some(FuseConfig::labeled().digest().as_str()));
    }

    #[test]
    fn three_turns_reach_counter_three() {
        let (_d, db) = concert();
        let enc = BuiltinEncoder::new(16).unwrap();
        let cfg = FuseConfig {
            seed: 11,
            ..FuseConfig::default()
        };
        let (out, report) = run(&cfg, &seed_pool(), &[db], &gateway(MockProvider::new(11)), &enc).unwrap();
        assert_eq!(out.turn(), 3);
        assert_eq!(report.turns.iter().map(|t| t.turn).collect::<Vec<_>>(), vec![1, 2, 3]);
        let inserted: usize = report.turns.iter().map(|t| t.inserted).sum();
        assert_eq!(out.len(), 4 + inserted);
    }

    #[test]
    fn scratch_run_bootstraps_first() {
        let (_d, db) = concert();
        let enc = BuiltinEncoder::new(16).unwrap();
        let cfg = FuseConfig {
            turns: 2,
            sqls_per_db: 4,
            ..FuseConfig::default()
        };
        let (out, report) =
            run(&cfg, &DemonstrationPool::new(), &[db], &gateway(MockProvider::new(0)), &enc).unwrap();
        assert_eq!(report.turns[0].turn, 1);
        assert!(out.iter().all(|d| d.origin == Origin::Synthesized && d.turn >= 1));
        assert!(out.turn() <= 2);
    }

    #[test]
    fn config_checks_and_digest() {
        assert!(FuseConfig { sqls_per_db: 0, ..FuseConfig::default() }.check().is_err());
        assert!(FuseConfig { k: Some(1), ..FuseConfig::default() }.check().is_err());
        let a = FuseConfig::default();
        assert_eq!(a.digest(), FuseConfig::default().digest());
        assert_ne!(a.digest(), FuseConfig { seed: 1, ..a.clone() }.digest());
        assert_eq!(a.digest().len(), 64);
    }
}
