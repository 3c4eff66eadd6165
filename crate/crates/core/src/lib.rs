//! Balanced binary-classification benchmarks for locally hosted language
//! models, scored with Cohen's kappa against expert labels.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod gateway;
pub mod metrics;
pub mod mock;
pub mod parser;
pub mod plan;
pub mod prompt;
pub mod report;
pub mod results;
pub mod rng;
pub mod run;
