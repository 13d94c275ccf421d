//! Experiment runner: synthetic data, training, Geo-Sharing against
//! baselines, oracle suites and ablation sweeps. Every random draw is derived
//! from the seeds in [`ExperimentConfig`].

mod config;
mod data;
mod experiment;
mod oracle;
mod train;

pub use config::{
    AblationSpec, Baseline, DataSpec, ExperimentConfig, Init, Optimizer, SharingConfig, Task, TrainConfig,
    SCHEMA_VERSION,
};
pub use data::{gen_data, same_partition, Dataset};
pub use experiment::{
    ablate, prepare, run_experiment, AblationRow, AblationTable, FirstOrderSummary, MethodResult, Prepared,
    RunReport, RunTiming, Sweep, TrainingSummary,
};
pub use oracle::{run_oracles, OracleReport, OracleSuite};
pub use train::{train, TraceEntry, TrainResult};

use sha2::{Digest, Sha256};

/// Hex SHA-256 of the JSON serialization of `value`.
pub fn json_hash<T: serde::Serialize>(value: &T) -> crate::Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
