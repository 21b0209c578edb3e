//! # mmsd-core
//!
//! Desk-scale multi-modal stuttering detector: three transformer modality
//! encoders, conv+linear length compression, attention fusion against a
//! shared embedding matrix, a causal-masked decoder with a binary head, a
//! deterministic trainer, and a synthetic multi-modal disfluency corpus.
//!
//! Everything runs on a small 64-bit tensor tape whose gradients are
//! verifiable against central finite differences.

pub mod attention;
mod binio;
pub mod data;
pub mod cli;
pub mod error;
pub mod kvfile;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
