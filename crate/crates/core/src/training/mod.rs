//! Loss functions, the optimizer and the two training stages.
//!
//! Stage I pre-trains the feature encoders, the modality experts and the answer decoder.
//! Stage II freezes encoders and experts and trains the router, decoder and purification
//! parameters while streams are dropped at random and recovered from the memory banks.

mod adam;
mod config;
mod log;
pub mod loss;
pub mod mix;
mod stages;

pub use adam::{Adam, AdamConfig};
pub use config::{MixVariant, TrainConfig};
pub use log::{EpochRecord, TrainLog};
pub use loss::{ranking_loss, task_loss, task_loss_value, total_loss, RankingTriplet};
pub use mix::{predict, Banks, FrozenContext, Prediction};
pub use stages::{mixing_summary, stage1_pretrain, stage2_mix};
