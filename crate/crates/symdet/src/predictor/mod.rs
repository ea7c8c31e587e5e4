//! Trainable point-cloud symmetry predictor: reverse-mode tape, network,
//! optimal-assignment training, and checkpointing.

pub mod model;
pub mod tape;
pub mod train;

pub use model::{
    farthest_point_indices, forward, predict, features, ModelConfig, ModelParams,
};
pub use train::{prepare_frame, train, train_step, Adam, TrainConfig, TrainReport};
