//! Experiment harness for dmlfed: metrics, theory checks, named
//! reproductions, CSV/SVG reports and the `dmlfed` command line.

pub mod cli;
pub mod experiments;
pub mod metrics;
pub mod plot;
pub mod report;
pub mod theory;
