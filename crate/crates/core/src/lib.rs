//! Generative modeling over neural-network weight space.
//!
//! The crate trains populations of small networks, removes their hidden-unit
//! permutation symmetry by aligning every member to a reference, optionally
//! compresses the flattened weights with PCA, fits a flow-matching vector
//! field over the result and samples new checkpoints by RK4 integration.
//!
//! Module map:
//!
//! - [`nn`]: MLP / BN-MLP substrate, toy multi-head attention, checkpoints
//! - [`data`]: Iris, IDX (MNIST-style) and Gaussian-blob datasets
//! - [`canon`]: Hungarian solver, Re-Basin weight matching, attention alignment
//! - [`pca`]: standard, incremental and Gram-matrix (dual) PCA
//! - [`flow`]: flow-matching model, trainer, RK4 sampler
//! - [`bn_recalib`]: exact pooled recalibration of batch-norm statistics
//! - [`metrics`]: wrong-set IoU diversity and distribution distances
//! - [`pipeline`]: the staged experiment driven by the `weightflow` binary

pub mod bn_recalib;
pub mod canon;
pub mod config;
pub mod data;
mod binio;
mod error;
pub mod flow;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod pca;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
