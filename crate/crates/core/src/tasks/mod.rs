//! Benchmark generators and their exact oracles: slowly-changing bit-flip
//! regression, permuted MNIST, and Boyan-chain policy evaluation. All
//! generators are pure functions of (seed, config).

pub mod boyan;
pub mod mnist;
pub mod scr;

pub use boyan::{boyan_generate, solve_stationary, solve_values, BoyanTask};
pub use mnist::{MnistData, PermutedMnistTask};
pub use scr::{LtuNet, ScrState};

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{file}: {reason}")]
    Parse { file: String, reason: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("download failed: {0}")]
    Fetch(String),
}
