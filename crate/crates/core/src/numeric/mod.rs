//! Dense `f64` tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::finite_diff_check;
pub use params::{Fingerprint, ModelDims, ModelParams, ParamId};
pub use tape::{bce, dot, sigmoid, softmax, Tape, Var, LOG_CLAMP};
pub use tensor::Tensor;
