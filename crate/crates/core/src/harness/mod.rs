//! Experiment driver: presets, configuration, Monte-Carlo sweeps, rate fits and oracle checks.

pub mod config;
pub mod oracle;
pub mod presets;
pub mod rate;
pub mod sweep;

pub use config::{DirectionSource, Estimator, ExperimentConfig};
pub use oracle::{oracle_check, OracleOptions, OracleReport};
pub use presets::preset;
pub use rate::{fit_rate, Metric, RateFit};
pub use sweep::{read_csv, replication, run_sweep, sweep_meta, write_csv, Replication, RiskRecord, SweepOutput};
