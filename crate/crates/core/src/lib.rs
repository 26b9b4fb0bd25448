//! Ego-graph classifiers and continual learning over streams of task graphs.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph_store`]: task graph ingestion, splits and descriptive statistics.
//! - [`ego_sampler`]: fixed-size ego-graph extraction (BFS / random walk with restart).
//! - [`features`]: DeepWalk embeddings and standardized raw count features.
//! - [`nn`]: a small reverse-mode gradient engine with GAT and GCN layers.
//! - [`continual`]: task-stream runner with ego-graph replay and baselines.
//! - [`metrics`]: AUC, the AUC matrix, average AUC, forgetting and timing.
//! - [`synth`]: synthetic drifting task streams.
//! - [`manifest`] and [`cli`]: the experiment manifest and command implementations.

pub mod cli;
pub mod continual;
pub mod ego_sampler;
pub mod error;
pub mod features;
pub mod graph_store;
pub mod manifest;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod synth;
mod util;

pub use error::{Error, Result};
