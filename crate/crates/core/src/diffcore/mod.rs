//! Minimal reverse-mode automatic differentiation over dense 2-D `f64`
//! arrays, plus a central-difference gradient checker.

mod check;
mod layers;
mod params;
mod tape;
mod tensor;

pub use check::{grad_check, GradCheckReport};
pub use layers::{Linear, Norm};
pub use params::{Bound, Param, ParamSet};
pub use tape::{Gradients, Tape, Var, L2_NORMALIZE_EPS, LAYER_NORM_EPS};
pub use tensor::Tensor;
