//! Numeric substrate: dense `f64` tensors, a define-by-run gradient tape,
//! named parameter sets with a binary checkpoint format, Adam, and the
//! warm-up/cosine learning-rate schedule.

mod adam;
mod params;
mod schedule;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use params::{BoundParams, GradMap, ModelParams, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use schedule::lr_schedule;
pub use tape::{concat_cols, Gradients, Tape, Var, LAYER_NORM_EPS, NEG_LARGE};
pub use tensor::{log_softmax, softmax, Tensor};
