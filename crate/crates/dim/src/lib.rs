//! Adversarial-robustness workbench for MNIST: a small reverse-mode network
//! engine, the denoised internal-model classifier family and baselines, a
//! from-scratch attack suite, and the evaluation/report pipeline.

pub mod attacks;
pub mod cli;
pub mod eval;
pub mod data;
pub mod error;
pub mod models;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{DimError, Result};
pub use tensor::Tensor;
