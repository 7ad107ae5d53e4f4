//! Training loops (single-task, joint-sum, round-robin), AdamW,
//! checkpoints, and the experiment matrix driver.

mod checkpoint;
mod config;
mod data;
mod log;
mod matrix;
mod optim;
mod setup;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointRecord, LoadedCheckpoint, TrainingState};
pub use config::{Strategy, TrainerConfig};
pub use data::{encode_examples, evaluate, make_batch, parse_task, predict, EncodedExample};
pub use log::{read_log, AbortRecord, EpochRecord, LogRecord, StepRecord, TrainingLog};
pub use matrix::{run_experiment_matrix, MatrixCell, MatrixResult, MatrixSpec};
pub use optim::{clip_scale, grad_norm, AdamW, AdamWConfig, LinearSchedule};
pub use setup::ModelRecipe;
pub use trainer::{
    evaluate_examples, resume, train, train_multitask, train_single_task, TrainOutcome, BEST_DIR, LAST_DIR, LOG_FILE,
};

#[cfg(test)]
mod tests;
