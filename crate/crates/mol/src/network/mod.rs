//! DeepONet surrogates: networks, losses, and the training loop.

pub mod loss;
pub mod mlp;
pub mod model;
pub mod train;

pub use loss::{
    evaluate_losses, loss_bc, loss_obs, loss_pde, BcData, LossBundle, LossWeights, ObsData,
    PdeConstraintSet, TrainingData,
};
pub use mlp::{Activation, Mlp};
pub use model::{
    load_checkpoint, save_checkpoint, BranchArch, BranchNet, ConvBranch, DeepONetModel,
};
pub use train::{mean_l2_relative_error, train, TrainReport, TrainingConfig};
