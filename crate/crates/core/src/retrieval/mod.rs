//! Catalog retrieval with precomputed embeddings, and the benchmark that
//! compares it with exhaustive cross-attentive scoring.
//!
//! Operation counts come from the counters inside the models, so every
//! reported count is exact.

mod benchmark;
mod index;
mod scoring;

pub use benchmark::{run_benchmark, BenchmarkOptions, BenchmarkReport, Scenario};
pub use index::{build_index, build_index_parallel, model_fingerprint, EmbeddingIndex, INDEX_MAGIC};
pub use scoring::{offline_pairwise, online_query, ranking_logit, PairwiseRun, ScoreMatrix, ScoringMode};
