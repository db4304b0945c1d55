//! Toy convolutional feature encoder, Adam, the batched training loop and
//! binary checkpoints.

mod checkpoint;
mod encoder;
mod optim;
mod train;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use encoder::{image_tensor, Encoder, EncoderConfig, EncoderVars, FEATURE_EPS};
pub use optim::{Adam, AdamConfig};
pub use train::{center_crop, grid_keypoints, Objective, StepResult, TrainConfig, TrainData, Trainer};
