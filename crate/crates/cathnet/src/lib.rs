//! Host-side driver for the cathnet model: configuration, dataset and
//! checkpoint formats, the training loop, evaluation and ablations.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod evaluate;
pub mod report;
pub mod trainer;

pub use config::RunConfig;
pub use trainer::{train, Trainer};
