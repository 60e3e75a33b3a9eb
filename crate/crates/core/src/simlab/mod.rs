//! Monte-Carlo evaluation of the inference procedures.

pub mod config;
pub mod dgp;
pub mod metrics;
pub mod runner;

pub use config::SimConfig;
pub use dgp::{generate_dataset, SimDraw, TrueParams};
pub use metrics::{compute_metrics, AggregateMetrics, IntervalMetrics, ReplicationRecord, SelectionCounts};
pub use runner::{derive_seed, run_replication, run_replications, SimulationResult};
