//! Simulated patient conversations for medical error disclosure practice,
//! with rubric-based turn-level and end-of-session feedback.
//!
//! A session couples two agents over a shared conversation: the evaluator
//! scores each clinician turn against the rubric selected by the patient's
//! conversation stage, and the patient agent replies with speech markup and
//! voice instructions, steered only by a sanitized digest of that feedback.

pub mod asymmetry;
pub mod classifier;
pub mod config;
pub mod domain;
pub mod evaluator;
pub mod extraction;
pub mod orchestrator;
pub mod patient;
pub mod prompts;
pub mod replay;
pub mod provider;
pub mod report;
pub mod session;
pub mod store;
pub mod transcript;
mod structured;
