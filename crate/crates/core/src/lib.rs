//! Influence-guided synthetic data generation at desk scale.
//!
//! A rubric policy is trained with GRPO to emit rubrics whose generated
//! examples have high optimizer-aware trajectory influence on a target
//! classifier's validation loss. See the README for the end-to-end pipeline.

pub mod config;
pub mod env;
pub mod error;
pub mod exec;
pub mod grpo;
pub mod influence;
pub mod io;
pub mod model;
pub mod optimizer;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use exec::Execution;
pub use params::ParamVector;
