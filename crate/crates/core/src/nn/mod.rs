//! Deterministic layers, losses, optimizers and maximum-likelihood training.

pub mod graph;
pub mod loss;
pub mod model;
pub mod optim;
pub mod train;

pub use graph::{Architecture, InitScheme, LayerSpec, ModelGraph, ParamLayer};
pub use loss::{accuracy, argmax, cross_entropy_loss, cross_entropy_tape};
pub use model::{DeterministicCheckpoint, DeterministicModel, LayerParams, TrainingMeta};
pub use optim::{Optimizer, OptimizerConfig, StepDecay};
pub use train::{evaluate_accuracy, mean_cross_entropy, train_mle, train_mle_from, MleConfig, MleEpoch, MleRun};
