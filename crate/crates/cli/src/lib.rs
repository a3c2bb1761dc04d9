//! Experiment harness around the `kpplab` library: layered configuration,
//! dispatch per experiment kind, hashed artifacts with a manifest, and
//! plot-data emission.

pub mod config;
pub mod error;
pub mod manifest;
pub mod plot;
pub mod run;

pub use config::{ExperimentConfig, Kind};
pub use error::CliError;
pub use manifest::{ArtifactEntry, Assertion, RunManifest};
pub use plot::{emit_plot_data, PlotKind};
pub use run::run_experiment;
