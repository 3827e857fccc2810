//! Batch front-end for `ttd-core`: fusion, weight export, evaluation,
//! training, synthetic data, bound reports and ablations.

pub mod args;
pub mod commands;
pub mod heatmap;
pub mod items;
pub mod outputs;
pub mod settings;

pub use args::Cli;
pub use commands::dispatch;
