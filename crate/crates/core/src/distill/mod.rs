//! Student/teacher self-distillation: prototype heads, Sinkhorn-Knopp
//! centering, sharpened cross-entropy over matched points, KoLeo spreading,
//! EMA teacher updates and per-step loss assembly.

mod head;
mod loss;
mod sinkhorn;
mod state;

pub use head::{head_forward, Centering, Head, HeadConfig};
pub use loss::{distill_loss, koleo, koleo_value, KOLEO_EPS};
pub use sinkhorn::{sinkhorn_center, softmax_center};
pub use state::{
    ema_update, record_step_loss, step_loss, teacher_targets, DistillState, PairSpec, RecordedLoss,
    StepLoss, TeacherTarget, ViewId,
};
