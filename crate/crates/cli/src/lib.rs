//! Config-driven experiment runner for the joint estimation and sensor
//! placement algorithm.

pub mod average;
pub mod config;
pub mod csvio;
pub mod error;
pub mod gradcheck;
pub mod models;
pub mod oracle;
pub mod runner;
pub mod summary;

pub use error::{CliError, Result};
