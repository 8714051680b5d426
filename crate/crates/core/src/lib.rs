//! Unsupervised anomaly segmentation with autoencoding models.
//!
//! Models of normal anatomy (plain, variational and adversarial
//! autoencoders with dense or spatial bottlenecks) are trained on healthy
//! images only. At test time the thresholded, postprocessed residual between
//! an image and its reconstruction is the segmentation.

pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod training;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{finite_diff_check, Tape, Tensor, Var};
