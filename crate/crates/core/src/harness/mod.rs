//! Experiment configuration, the end-to-end pipeline, Monte Carlo
//! aggregation and microdata I/O.

pub mod config;
pub mod experiment;
pub mod microdata;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use experiment::{run_experiment, run_replicate, ExperimentReport, Method, ReplicateReport};
pub use microdata::{ingest_microdata, validate_microdata, MicrodataPaths};
pub use pipeline::World;
