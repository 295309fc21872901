//! Training-free inversion of face-embedding models by search in the latent
//! space of a pretrained generator.
//!
//! The flow is: build a pool of screened latent codes ([`pool`]), rank it
//! against a leaked embedding ([`select`]), refine the best candidates inside
//! a norm ball ([`attack`]) under a query ledger ([`pipeline`]), and score the
//! reconstructions ([`eval`]). [`models::SyntheticWorld`] provides a fully
//! deterministic generator, embedders and detector for experiments.

pub mod attack;
pub mod config;
pub mod domain;
pub mod error;
pub mod eval;
pub mod models;
pub mod pipeline;
pub mod pool;
pub mod records;
pub mod select;
pub mod stats;

pub use domain::{cosine_similarity, decide_match, EmbeddingVector, ImageSample, ImageShape, LatentCode, TargetSpec};
pub use error::{Error, Result};
pub use pipeline::{run_attack, AttackConfig, AttackResult, QueryLedger};
pub use pool::{build_pool, LatentPool, PoolSpec};
