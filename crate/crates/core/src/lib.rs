//! Latency-prediction toolkit for game-network measurements.
//!
//! Three models over traceroute and RTT data:
//!
//! * [`markov`]: a four-state hop-delay Markov chain, its long-run state
//!   distribution, and next-hop spike prediction;
//! * [`mlp`]: a ReLU feed-forward regressor for GPN round-trip time;
//! * [`svm`]: a one-vs-one kernel SVM (SMO solver) for latency bands, with a
//!   cross-validated grid-search tuner.
//!
//! [`ingest`] and [`features`] turn CSV measurements into model inputs,
//! [`eval`] reports results, and [`synth`] generates seeded test data.
//! Data-parallel loops go through [`par`], which falls back to sequential
//! execution when the `parallel` feature is off.

pub mod domain;
pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod markov;
pub mod mlp;
pub mod par;
pub mod split;
pub mod svm;
pub mod synth;

pub use domain::{GeoPoint, HopBinning, HopState, MergedRecord, SpeedLabel, TracerouteRecord};
pub use error::{Error, Result};
pub use par::Execution;
