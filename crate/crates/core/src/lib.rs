//! Diversity measurement and fusion-based growth of text-to-SQL
//! demonstration pools.
//!
//! The diversity of a pool is the reciprocal radius of the largest empty ball
//! centred inside the convex hull of the embedded demonstration questions
//! (see [`geometry::compute_dm`]). Pools grow turn by turn: questions are
//! embedded and clustered, pairs of demonstrations from distinct clusters are
//! fused into new SQL by an LLM, questions are synthesized for that SQL, and
//! the pair is kept when an independent text-to-SQL pass reproduces the same
//! execution result ([`pipeline`]).

pub mod clustering;
pub mod embedding;
pub mod evalkit;
pub mod geometry;
mod http;
pub mod llm;
pub mod pipeline;
pub mod pool;
pub mod retrieval;
pub mod schema;
pub mod sqlkit;

pub use pool::{load_pool, save_pool, Demonstration, DemonstrationPool, Origin, PoolError};
pub use schema::DatabaseSchema;
