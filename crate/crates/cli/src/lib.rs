//! Pipeline orchestration, results tables and plots for the `feeder` binary.

pub mod pipeline;
pub mod report;
pub mod svg;

pub use pipeline::Pipeline;
pub use report::{Report, ReportRow};
