//! Empirical neural tangent kernel laboratory.
//!
//! Trains small CNN/MLP models through sequences of tasks with controlled
//! distribution shifts and tracks the empirical NTK of the first task's data:
//! its spectral norm, kernel distance from initialization, kernel velocity and
//! alignment with the label kernel. An independent oracle implements the
//! static-kernel residual dynamics and a brute-force NTK for cross-checking.
//!
//! Module map:
//! - [`tensor`] / [`autodiff`]: dense tensors, flat parameter vectors and a
//!   reverse-mode tape.
//! - [`models`]: the model zoo, initialization regimes, width-scaled learning rates.
//! - [`ntk`]: Gram matrices, spectra, CKA and the kernel metrics.
//! - [`continual`]: task distributions, shift families and batch sampling.
//! - [`data`]: synthetic and CIFAR-binary datasets.
//! - [`runner`]: experiment configs, the training loop and CSV persistence.
//! - [`oracle`]: independent kernel-regime mathematics.
//! - [`report`]: reactivation statistics and SVG plots.

pub mod autodiff;
pub mod continual;
pub mod data;
pub mod error;
pub mod kv;
pub mod linalg;
pub mod models;
pub mod ntk;
pub mod oracle;
pub mod report;
pub mod runner;
pub mod tensor;

pub use error::{NtkError, Result};

/// Artifact version recorded in run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
