//! Configuration, evaluation, metrics persistence and the training driver.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod metrics;
pub mod run;

pub use checkpoint::Checkpoint;
pub use config::{parse_seeds, RunConfig};
pub use eval::evaluate;
pub use metrics::{final_score, FinalScore, RunMetrics};
pub use run::{run_seeds, run_training, sweep_rho, train, RunResult, SweepRow};
