//! Federated-learning simulator that infers the relative quality of
//! participants' datasets from aggregated updates alone.
//!
//! The crate is organized around an aggregation boundary:
//!
//! * [`model`] — minimal dense network engine (MLP, SGD, cross-entropy).
//! * [`data`] — IDX/CIFAR ingestion, IID sharding, label-noise quality
//!   grading.
//! * [`federation`] — round orchestration, misbehaviour injection,
//!   multiplicative-weight boosting, pairwise-mask demonstration. Everything
//!   that sees individual updates lives here.
//! * [`rounds`] — the aggregate-only per-round record.
//! * [`scoring`] — the Good/Bad/Ugly quality scores over that record.
//! * [`metrics`] — fractional ranks, Spearman correlation, cheater
//!   positioning.
//! * [`estimator`] — the linear-system recovery of qualities, plus the
//!   explicitly privileged leave-one-out baseline.
//!
//! `scoring`, `metrics`, and `estimator` (minus leave-one-out) never touch
//! model parameters or shards; `tests/sa_boundary.rs` audits that.

pub mod data;
pub mod error;
pub mod estimator;
pub mod federation;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod rounds;
pub mod scoring;

pub use error::{Error, Result};
