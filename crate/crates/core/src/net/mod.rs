//! Residual risk networks: image-only (RiskNet) and hybrid image + score
//! (HyRiskNet) models, two-stage training and gradient verification.

mod backbone;
mod checkpoint;
mod gradcheck;
mod model;
mod ops;
mod optim;
mod train;

pub use backbone::{Backbone, BackboneConfig, Depth, Mode, NamedTensor, ParamSet, Tape, MICRO_DEFAULT_FEATURES, MICRO_INPUT_SIDE};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use gradcheck::{gradient_check, gradient_check_with, GradCheckReport};
pub use model::{
    batch_tensor, cross_entropy, forward_hyrisknet, forward_risknet, ModelParams, RiskOutput, ScoreNorm, ScoreSource,
    NONSURVIVOR, SURVIVOR,
};
pub use ops::Tensor;
pub use optim::Adam;
pub use train::{
    loss_and_gradient, lr_schedule, predict, train_stage1, train_stage2, Strategy, TrainConfig, TrainExample,
    TrainReport, Trained, FINETUNE_LEARNING_RATE, LR_DECAY_EVERY, LR_DECAY_FACTOR, SCRATCH_LEARNING_RATE,
    STAGE2_HEAD_LEARNING_RATE,
};
