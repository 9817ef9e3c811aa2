//! Trainable toy encoder, optimizer, learning-rate schedule and the training loop.

mod adam;
mod checkpoint;
mod encoder;
mod schedule;
mod train;

pub use adam::{adam_step, AdamState};
pub use checkpoint::Checkpoint;
pub use encoder::{encode, Encoded, EncoderGrads, EncoderParams, EncoderTrace};
pub use schedule::ScheduleConfig;
pub use train::{train, ModelConfig, StepRecord, TrainConfig, TrainOutcome, TrainState, Trainer};
