//! Highway traffic simulator plus multi-agent RL harness: trains a
//! dual-modality background-vehicle driver model against a system under
//! test, records evolving scenarios, filters safety-critical ones and
//! evaluates them for fidelity, efficiency, complexity and diversity.

pub mod cli;
pub mod config;
pub mod control;
pub mod learner;
pub mod metrics;
pub mod models;
pub mod observation;
pub mod rewards;
pub mod scenarios;
pub mod sim;
pub mod error;
pub mod world;

pub use error::{Error, Result};

/// CLI entry point over the process arguments.
pub fn run_cli() -> i32 {
    cli::run(std::env::args_os())
}
