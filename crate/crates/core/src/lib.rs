//! Label-weighted contrastive pre-training for paired image/text encoders.
//!
//! The crate couples two toy encoders with a contrastive objective whose
//! negatives are down-weighted by the similarity of their multi-hot labels,
//! adds momentum encoders with memory queues to recover the contrast lost to
//! that weighting, and ships the rule-based converter that produces the
//! labels from diagnostic text.

pub mod cli;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod evalkit;
pub mod experiment;
pub mod labelkit;
pub mod memqueue;
pub mod numerics;
pub mod optim;
pub mod reportconv;
pub mod trainer;
pub mod wscloss;

pub use error::{Error, Result};
