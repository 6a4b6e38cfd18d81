//! Metrics, artifact containers and experiment orchestration.

pub mod config;
pub mod container;
pub mod data;
pub mod experiment;
pub mod metrics;

pub use config::{ExperimentConfig, Method};
pub use container::{read_container, write_container, Container, Dtype, Header, Payload};
pub use experiment::{run_experiment, ExperimentReport};
pub use metrics::{dice, snr_db, MetricsRow, SNR_CAP_DB};
