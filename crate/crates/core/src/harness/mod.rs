//! Declarative experiments: JSON configs in, traces, reports and SVG plots out.

pub mod config;
pub mod plot;
pub mod runner;

pub use config::{ConstantsSpec, ExperimentConfig, InitSpec, PlotSpec, Problem, ProblemSpec, SeedSpec};
pub use plot::{contour_svg, objective_svg, read_trace_csv, Series};
pub use runner::{execute, run_experiment, write_artifacts, ExperimentResult, MethodReport, MethodResult, Overrides, SeedRow};
