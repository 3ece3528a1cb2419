//! Configuration, training, evaluation, checkpointing, and ablations.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod eval;
pub mod train;

pub use ablate::{ablate, AblationAxis, AblationRow, AblationTable};
pub use checkpoint::{load_model, Checkpoint};
pub use config::{distractor_synth, DataConfig, OptimizerConfig, Profile, RunConfig, Schedule};
pub use data::{load_splits, prepare_all, shuffle_prompts, PreparedSample, Splits};
pub use eval::{evaluate_checkpoint, evaluate_samples, grounding_ap, grounding_ap_of, predict_prepared};
pub use train::{init_model, train, train_on, EpochLog, TrainOptions, TrainOutcome};
