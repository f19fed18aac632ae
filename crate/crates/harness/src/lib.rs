//! Seeded Monte Carlo campaigns over the `dsspread` transceiver chain.
//!
//! A run is described by an [`ExperimentConfig`] (flat TOML keys, optionally
//! layered over a named preset), validated into an [`Experiment`] and expanded
//! into a [`Scenario`] that the campaigns share.

pub mod campaign;
pub mod config;
pub mod seed;

pub use campaign::{
    run_ber_campaign, run_crlb_curve, run_nmse_campaign, write_csv, HarnessError, ResultRecord, Scenario,
};
pub use config::{preset, ConfigError, Estimator, Experiment, ExperimentConfig, PRESETS};
