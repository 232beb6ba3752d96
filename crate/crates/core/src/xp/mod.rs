//! Experiment sweeps, metrics files and plots.

pub mod lab;
pub mod plot;
pub mod records;
pub mod reference;
pub mod spec;

pub use lab::{run_data_scaling, run_effectiveness, run_experiment, run_forgetting, run_scarce, Lab, SweepOutcome};
pub use plot::{emit_plot, plot_file};
pub use records::{read_metrics, MetricsRecord, MetricsWriter, RunManifest};
pub use spec::{default_out_dir, ExperimentKind, ExperimentSpec, OUT_ENV};
