//! Coachable-call classification and guard-railed call recommendations.
//!
//! The crate covers the whole offline pipeline: corpus ingestion with PII
//! redaction, balanced dataset splits, text featurization, classical
//! baselines, a from-scratch transformer classifier, evaluation, and the
//! recommendation policy used by the service.

pub mod baselines;
pub mod corpus;
pub mod dataset;
pub mod eval;
pub mod neural;
pub mod pipeline;
pub mod recommend;
pub mod synth;
pub mod textproc;
