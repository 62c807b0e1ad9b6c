//! Joint training loop, negative queue, optimizer and checkpoints.

pub mod checkpoint;
mod config;
mod data;
mod optim;
mod queue;
mod state;

pub use config::{
    ActiveTerms, AttackChoice, AugmentSection, DataConfig, OptimizerConfig, OptimizerKind, RobustnessConfig,
    TrainConfig, UdaAugment,
};
pub use data::{encode_labeled, encode_texts, LabeledSeq, TrainData};
pub use optim::Optimizer;
pub use queue::NegativeQueue;
pub use state::{
    checkpoint_path, cycle_indices, make_batch, run, run_training, train_step, HistoryRow, RunOptions,
    StepBatch, TrainState, CHECKPOINT_DIR, HISTORY_FILE, MODEL_FILE,
};
