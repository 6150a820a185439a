//! Trace-driven memory-hierarchy simulator for two-level prefetching: GHB
//! stride and Markov prefetchers propose blocks, and an online-trained
//! integer perceptron decides which proposals are actually fetched.
//!
//! Module map:
//! - [`trace`]: trace records, the text format, synthetic generators
//! - [`cache`]: set-associative LRU levels and the hierarchy
//! - [`ghb`]: the global history buffer
//! - [`prefetch`]: stride and Markov suggestion generation
//! - [`perceptron`]: features, voting, training, accept/deny tables
//! - [`engine`]: the per-access datapath and run reports
//! - [`metrics`]: rates, means, comparison tables
//! - [`config`], [`cli`]: run configuration and subcommands

pub mod cache;
pub mod cli;
pub mod config;
pub mod engine;
pub mod ghb;
pub mod metrics;
pub mod perceptron;
pub mod prefetch;
pub mod trace;

pub use engine::{run, run_accesses, Engine, EngineConfig, PrefetcherKind, RunReport};
pub use trace::{AccessKind, BlockAddr, MemoryAccess};
