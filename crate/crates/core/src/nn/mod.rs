//! Small dense numerical stack: tensors, a differentiation tape, the layers
//! the model needs, Adam, decay schedules, gradient checking and the
//! checkpoint container.

mod checkpoint;
mod gradcheck;
mod layers;
mod optim;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use checkpoint::{Checkpoint, RngState, FORMAT_VERSION, MAGIC};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{GatedReadout, GruCell, Linear};
pub use optim::{AdamState, ExpSchedule};
pub use params::{ParamId, ParamStore};
pub use tape::{huber, sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("parameter layouts differ")]
    LayoutMismatch,
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
