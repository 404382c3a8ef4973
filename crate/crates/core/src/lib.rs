//! Attention RNN dialogue language models with a dynamic attention scope,
//! RNN-LM and seq2seq baselines, LDA topic reranking, and the evaluation
//! metrics used to compare them.

#![allow(clippy::needless_range_loop)]

pub mod corpus;
pub mod error;
pub mod generator;
pub mod metrics;
pub mod models;
pub mod numeric;
pub mod synth;
pub mod topics;
pub mod trainer;

pub use error::{Error, Result};
