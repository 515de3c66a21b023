//! Command-line tools, report rendering and an HTTP inference service for
//! the lesion benchmark.

pub mod cli;
pub mod config;
pub mod plot;
pub mod report;
pub mod server;

pub use cli::run_cli;
