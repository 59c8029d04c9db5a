//! Configuration, scenario library, time loop and persistence.

pub mod checkpoint;
pub mod config;
pub mod output;
pub mod scenario;
pub mod sim;

pub use checkpoint::Checkpoint;
pub use config::{load_config, SimConfig};
pub use output::RunSummary;
pub use scenario::{scenario, SCENARIOS};
pub use sim::{resume, run, RunOptions, Simulation};
