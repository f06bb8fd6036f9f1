//! Minimal reverse-mode differentiation over dense `f64` matrices, with
//! the recurrent cells, optimizer and checkpoint format used by the parser.

mod checkpoint;
mod gradcheck;
pub mod nn;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, ParamCheck, RELATIVE_ERROR_FLOOR};
pub use optim::Adam;
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{logistic, softmax, Gradients, Tape, Var};
pub use tensor::Tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("index {index} out of range {len} in {op}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("empty input to {0}")]
    EmptyInput(&'static str),
    #[error("checkpoint does not match model: {0}")]
    CheckpointMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Seeded generator used for every parameter initialization.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub use rand_chacha::ChaCha8Rng as Rng;
