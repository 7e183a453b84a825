//! Transfer-learning privacy laboratory.
//!
//! Trains dense networks under three transfer paradigms, records what each
//! paradigm exposes across the domain boundary, and measures how well
//! membership, property and batch-property attacks exploit it.
//!
//! Module map:
//!
//! * [`nn`]: f64 MLP engine (forward, backward, dropout, BCE, serializer)
//! * [`optim`]: SGD, Adam, SGLD and DP-SGD updates
//! * [`data`]: UCI-Adult ingestion, domain split, property/batch datasets
//! * [`transfer`]: model-, mapping- and parameter-based training with traces
//! * [`attacks`]: the three inference attacks
//! * [`metrics`]: AUC, accuracy, per-class precision, Pearson
//! * [`runner`]: configs, seeded pipelines, JSONL reports and tables
//!
//! All randomness flows from explicit seeds through [`seed::derive`].

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod runner;
pub mod seed;
pub mod selftest;
pub mod transfer;

pub use error::{Error, Result, Stage};
pub use nn::{Mlp, MlpSpec};
