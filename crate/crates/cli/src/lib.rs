//! Experiment harness for adversarial triplet embeddings.
//!
//! The library half of the `ate` binary: experiment configuration
//! ([`config`]), the deterministic training loop ([`train`]), and the
//! command implementations behind each CLI verb ([`commands`]). It is a
//! library so that integration tests can drive experiments in-process.

pub mod commands;
pub mod config;
pub mod train;
