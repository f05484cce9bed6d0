//! Configuration-driven sweeps of the implied Sharpe ratio expansion and
//! comparisons against the PDE and Monte Carlo references.

pub mod checks;
pub mod compare;
pub mod config;
pub mod presets;
pub mod sweep;

pub use compare::{run_compare, CompareReport};
pub use config::SweepConfig;
pub use sweep::{run_sweep, SweepOutput, SweepRow};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] isr_core::IsrError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
