//! Conditional posterior estimator, latent codec, training and checkpoints.

pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod network;
pub mod train;

pub use checkpoint::{Checkpoint, TrainedModel};
pub use codec::LatentCodec;
pub use config::{ConditionCards, ConditionSpec, DenoiserConfig, LR_RANGE};
pub use network::{expected_param_count, timestep_embedding, Denoiser, DenoiserOutput, ParamLayout, Slot};
pub use train::{corrupt, train, Adam, NoisyBatch, TrainingData};
