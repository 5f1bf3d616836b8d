//! Distilled sentence embeddings at desk scale.
//!
//! A cross-attentive transformer teacher scores sentence pairs jointly. A
//! Siamese student embeds each sentence on its own and scores pairs with a
//! small similarity head; it is trained to reproduce the teacher's logits.
//! Because student embeddings can be precomputed, scoring a query against a
//! catalog costs one encoder pass plus `N` cheap head evaluations instead of
//! `N` full encoder passes. The [`retrieval`] module measures exactly that.

pub mod checkpoint;
pub mod data;
pub mod distill;
pub mod encoder;
pub mod error;
pub mod numkernel;
pub mod retrieval;
pub mod student;
pub mod teacher;

pub use error::{DseError, Result};
