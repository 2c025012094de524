//! Batch experiment harness for the linear TD laboratory: config loading,
//! seeded runs, fixed-point sweeps, invariant checks, and CSV/SVG output.

pub mod checks;
pub mod config;
pub mod emit;
pub mod runner;
pub mod sweep;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] tdlab::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
