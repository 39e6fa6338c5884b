//! Scenario configuration, the round driver and run artifacts.

mod config;
mod report;
mod state;

pub use config::{
    DatasetSection, DatasetSource, GlobalLossMode, Method, ProtocolSection, ScenarioConfig, TrainingSection,
};
pub use report::{
    compare, compare_csv, metrics_csv, run_scenario, run_to_dir, sweep, sweep_csv, write_run, ClusterTally, CompareRow,
    RoundReport, RoundTrace, RunOutput, SweepRow,
};
pub use state::{derive_seed, load_dataset, Simulation, MIN_CLUSTER_SIZE};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Fl(#[from] crate::fl::FlError),
    #[error(transparent)]
    Constellation(#[from] crate::constellation::ConstellationError),
    #[error(transparent)]
    Channel(#[from] crate::channel::ChannelError),
    #[error(transparent)]
    Defense(#[from] crate::defense::DefenseError),
    #[error(transparent)]
    Ledger(#[from] crate::ledger::LedgerError),
    #[error(transparent)]
    Consensus(#[from] crate::consensus::ConsensusError),
    #[error(transparent)]
    Attack(#[from] crate::attacks::AttackError),
}

impl From<std::io::Error> for SimError {
    fn from(e: std::io::Error) -> Self {
        SimError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for SimError {
    fn from(e: serde_json::Error) -> Self {
        SimError::Io(e.to_string())
    }
}
