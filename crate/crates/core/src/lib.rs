//! Contrastive image-text training with entropy penalties on the
//! token-patch similarity matrix, zero-shot scoring and evaluation
//! statistics, sized for a toy synthetic task.
//!
//! The numerical core is generic over [`numerics::Scalar`] (`f32` or
//! `f64`); the aliases below fix it to `f64`, which the trainer and the
//! command-line tool use.

mod container;
pub mod encoders;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod numerics;
pub mod synth_data;
pub mod trainer;
pub mod zeroshot;

pub use error::{Error, Result};

pub type Tensor64 = numerics::Tensor<f64>;
pub type Tensor32 = numerics::Tensor<f32>;
pub type ModelParams64 = encoders::ModelParams<f64>;
pub type ModelParams32 = encoders::ModelParams<f32>;
pub type Checkpoint64 = trainer::Checkpoint<f64>;
pub type Checkpoint32 = trainer::Checkpoint<f32>;
pub type QuerySet64 = zeroshot::QuerySet<f64>;
