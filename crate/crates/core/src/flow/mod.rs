//! Flow matching over flat weight vectors or PCA latents.
//!
//! Training regresses a time-conditioned vector field onto the straight-line
//! displacement `x1 - x0` between a Gaussian source point `x0` and a target
//! vector `x1`, evaluated at `x_t = (1 - t) x0 + t x1 + sigma * eps`.
//! Sampling integrates the learned field from `t = 0` to `t = 1` with RK4.

mod config;
mod io;
mod model;
mod rk4;
mod sample;
mod train;

pub use config::{FlowConfig, TimeDistribution};
pub use io::{load_flow, save_flow};
pub use model::{fm_loss_and_grad, FlowModel, FmNoise};
pub use rk4::rk4_integrate;
pub use sample::{sample, sample_with};
pub use train::{train_flow, train_flow_with_history, FlowTrainer, FlowTraining};
