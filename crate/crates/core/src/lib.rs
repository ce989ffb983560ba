//! Hybrid speculative decoding for autoregressive action models.
//!
//! The crate is `no_std` (it needs `alloc`) and contains every algorithm of the
//! engine: action tokenization, windowed trajectory kinematics, the task-sharded
//! retrieval store, draft trees, sequence-wise relaxed verification with
//! adaptive verify-skip, the per-step hybrid scheduler, and a deterministic toy
//! world whose scripted oracle stands in for the verifier model.
//!
//! File formats, the evaluation runner and the command line live in the
//! `hybrid-spec` companion crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod actions;
pub mod config;
pub mod drafting;
pub mod error;
pub mod harness;
pub mod kinematics;
pub mod linalg;
pub mod models;
pub mod hnsw;
pub mod retrieval;
pub mod scheduler;
pub mod verification;

pub use error::{Error, Result};
