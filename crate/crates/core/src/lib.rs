//! Embedding-space tooling for few-shot, style-consistent character
//! generation: token planning, random identity sampling, fidelity and
//! diversity metrics, a sequential validity filter, and aggregation of human
//! judgments into rankings and report tables.

pub mod cli;
pub mod error;
pub mod filter;
pub mod metrics;
mod numeric;
pub mod planner;
pub mod ranking;
pub mod report;
pub mod rng;
pub mod sampler;
pub mod store;

pub use error::{Error, Result};
