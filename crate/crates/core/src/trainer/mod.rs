//! Pretraining loop: view generation, student/teacher distillation, scheduled
//! optimization and EMA, with checkpoints, metrics logs and resume.

mod checkpoint;
mod config;
mod metrics;
mod run;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState, CHECKPOINT_MAGIC};
pub use config::{MaskingConfig, TrainConfig};
pub use metrics::{read_metrics, StepMetrics};
pub use run::{resume, train, TrainOutcome, Trainer};
