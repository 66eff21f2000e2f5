//! Data ingestion, synthetic data, experiments and reports around `glpn-core`.

pub mod config;
pub mod experiment;
pub mod ingest;
pub mod methods;
pub mod metrics;
pub mod synthetic;
pub mod verify;
