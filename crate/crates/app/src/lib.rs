//! Configuration, scenario orchestration and file output for the `pnpf`
//! command-line tool.

pub mod check;
pub mod config;
pub mod ell_sweep;
pub mod error;
pub mod mms;
pub mod output;
pub mod scenario;
pub mod weak_strong;

pub use config::RunConfig;
pub use error::AppError;
