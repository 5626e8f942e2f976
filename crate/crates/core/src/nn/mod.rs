//! Network substrate: architectures, checkpoints, forward/backward passes,
//! initialization, training and the toy attention block.

mod arch;
mod checkpoint;
mod forward;
mod init;
mod io;
mod mha;
mod ops;
pub mod optim;
mod train;

pub use arch::{Activation, ArchitectureSpec, AttentionGeometry};
pub use checkpoint::{BatchNorm, BnMomentum, Dense, Metadata, WeightCheckpoint, BN_EPS, DEFAULT_BN_MOMENTUM};
pub use forward::Mode;
pub use init::{init_weights, InitScheme};
pub use io::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use mha::{mha_forward, row_mean_broadcast, MhaWeights};
pub use ops::{argmax, gelu, gelu_grad};
pub use optim::{Optimizer, OptimizerKind};
pub use train::{
    cross_entropy, evaluate, full_batch_loss, train_network, train_network_detailed, train_population, Evaluation,
    TrainHyper, TrainOutcome,
};
