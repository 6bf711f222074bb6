//! Collaborative stance detection over a heterogeneous topic graph.
//!
//! Texts, per-stance LDA topics and stance labels form a bipartite graph.
//! A multi-hop propagation module learns node embeddings with a contrastive
//! objective, and predictions combine an encoder-side semantic score with a
//! topic-side distributed score.

pub mod corpus;
pub mod cpa;
pub mod error;
pub mod eval;
pub mod graph;
pub mod inference;
pub mod numerics;
pub mod run;
pub mod synth;
pub mod topics;
pub mod training;

pub use error::{Error, Result};
