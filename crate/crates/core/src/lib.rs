//! Continual-learning experiment suite.
//!
//! The crate reproduces the loss-of-plasticity phenomenon and its
//! disappearance under experience replay with attention-only Transformers,
//! across three benchmarks:
//!
//! - slowly-changing bit-flip regression against a fixed LTU target network,
//! - permuted-MNIST classification on 7x7 downsampled digits,
//! - policy evaluation on randomly generated Boyan chains via semi-gradient TD.
//!
//! Layout: [`grad`] is a small reverse-mode autodiff core; [`models`] holds
//! the four learner architectures (attention-only Transformer, MLP, RNN,
//! ERMLP); [`optim`] the AdamW optimizer and the TD pseudo-gradient;
//! [`replay`] the fixed-capacity buffer and embedding constructions;
//! [`tasks`] the three benchmark generators with their exact oracles; and
//! [`runner`] the experiment engine, metrics, and file outputs behind the
//! `plasticity` CLI.

pub mod grad;
pub mod models;
pub mod optim;
pub mod replay;
pub mod tasks;
pub mod runner;

pub use grad::{GradError, Matrix, Scalar, Tape};
pub use models::{ModelKind, ModelParams, ReadoutSpec};
pub use replay::ReplayBuffer;
