//! Optimization loops for both heads.

pub mod config;
pub mod data;
pub mod gradcheck;
pub mod init;
pub mod optim;
pub mod trainer;

pub use config::{
    InitScheme, ModelPreset, OptimizerConfig, OptimizerKind, TrainConfig, TrainHead, TrainLoss,
};
pub use data::{TrainingSet, TrainingShape};
pub use gradcheck::{gradient_check, GradCheckFixture};
pub use init::init_params;
pub use optim::Optimizer;
pub use trainer::{
    batch_loss_grad, train, train_manifest, validation_metric, write_curves_csv, BatchTargets,
    Counters, TrainOptions, TrainRun,
};
