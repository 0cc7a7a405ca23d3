//! Command-line front end of the `esfem` library: configuration, convergence
//! runs and the verification suite.

pub mod config;
pub mod run;
pub mod verify;

pub use config::RunConfig;
