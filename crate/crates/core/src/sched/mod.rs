//! Progressive schedules for every scheduled scalar, layer-wise learning
//! rates and the decoupled-weight-decay optimizer.

mod adamw;
mod config;
mod schedule;

pub use adamw::{AdamW, AdamWConfig};
pub use config::ScheduleConfig;
pub use schedule::{layer_lr, Curve, ScheduleSet, ScheduleSpec, ScheduleValues, WarmupCosine};
