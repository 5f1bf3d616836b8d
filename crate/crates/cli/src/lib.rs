//! The `dse` command-line pipeline: dataset generation, teacher training,
//! score caching, distillation, evaluation, indexing, querying and
//! benchmarking. Every artifact-producing command also writes a JSON run
//! manifest that `dse replay` can re-execute and check.

pub mod args;
mod commands;
pub mod manifest;

pub use args::{Cli, Command};
pub use commands::{execute, Outcome};
pub use manifest::RunManifest;
