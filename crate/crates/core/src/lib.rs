//! Long-document retrieval with block representations.
//!
//! Documents are cut into short punctuation-aligned blocks, each block is
//! embedded once offline into a [`store::Store`], and at query time a
//! document scores the weighted sum of its best block similarities. The crate
//! also carries a small pairwise trainer and TREC-style evaluation.
//!
//! With the default `parallel` feature, indexing, candidate scoring and
//! training windows run on rayon; disabling it falls back to sequential code
//! with identical outputs.

pub mod config;
pub mod corpus;
pub mod cost;
pub mod embed;
pub mod error;
pub mod eval;
pub mod par;
pub mod scoring;
pub mod segment;
pub mod store;
pub mod tokenize;
pub mod train;

pub use config::EngineConfig;
pub use embed::{
    format_input, Embedder, EmbedderKind, HashEmbedder, Representation, ServiceEmbedder,
};
pub use error::{Error, Result};
pub use par::Pool;
pub use scoring::{
    aggregate, block_score, rerank, Reranker, ScoredDocument, ScoringConfig, WeightVector,
};
pub use segment::{segment, truncate_blocks, Block, SegmentationConfig, SegmentationStrategy};
pub use store::{read_store, write_store, Store, StoreSummary, StoredDocument};
pub use tokenize::{count_tokens, tokenize, Token, TokenKind};
pub use train::{hinge_loss, ranknet_loss, Loss, ProjectionHead, TrainingTriplet};
