//! Multi-turn doctor/patient consultation benchmark.
//!
//! Multiple-choice medical questions are rebuilt into consultation cases
//! ([`dataset`]), a doctor agent interviews a simulated patient and a solver
//! answers the question from the transcript ([`orchestrator`], [`agents`]),
//! and the results are scored with ROUGE coverage, accuracy, and diversity
//! ([`metrics`]).

pub mod agents;
pub mod config;
pub mod dataset;
pub mod digest;
pub mod jsonl;
pub mod metrics;
pub mod model;
pub mod orchestrator;
