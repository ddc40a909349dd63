#![allow(dead_code)]

use std::path::Path;

use sqldemo::{DatabaseSchema, Demonstration, DemonstrationPool};

/// Builds `concert.sqlite` from the bundled script inside `dir`.
pub fn concert_db(dir: &Path) -> DatabaseSchema {
    let path = dir.join("concert.sqlite");
    let conn = rusqlite::Connection::open(&path).unwrap();
    conn.execute_batch(include_str!("../fixtures/concert.sql")).unwrap();
    drop(conn);
    DatabaseSchema::from_sqlite("concert", &path).unwrap()
}

pub fn seed_pool() -> DemonstrationPool {
    let mut pool = DemonstrationPool::new();
    for (i, (q, sql)) in [
        ("Which singers are older than 30?", "SELECT name FROM singer WHERE age > 30"),
        ("How many singers come from each country?", "SELECT country, count(*) FROM singer GROUP BY country"),
        ("List singers from oldest to youngest.", "SELECT name, age FROM singer ORDER BY age DESC"),
        ("Which male singers are there?", "SELECT name FROM singer WHERE is_male = 1"),
    ]
    .into_iter()
    .enumerate()
    {
        assert!(pool.dedup_insert(Demonstration::labeled(format!("seed-{i}"), "concert", q, sql)));
    }
    pool
}
