//! Scalar reverse-mode differentiation, the score network, and Adam.
//!
//! The model is evaluated through code generic over [`Scalar`], so the same
//! forward pass runs either on plain `f64` (simulation, prediction, metrics)
//! or on tape [`Var`]s (gradients for training). Sized for models with up to
//! ~10^4 parameters; everything is a flat `Vec` walk, no graph allocation
//! per node.

mod adam;
mod mlp;
mod tape;

pub use adam::{adam_step, AdamState};
pub use mlp::{mlp_forward, MlpParams};
pub use tape::{Scalar, Tape, TapeError, Var};
