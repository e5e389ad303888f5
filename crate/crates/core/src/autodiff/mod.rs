//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Build a [`Tape`] per forward pass, bind parameters from a [`ParamStore`]
//! with [`Tape::param`], compose ops, then call [`Tape::backward`] on a
//! scalar loss. Independent tapes can run on separate threads against a
//! shared, read-only store.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use params::{ParamGrads, ParamId, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tape::{Grads, Tape, Var, LOG_FLOOR};
pub use tensor::Tensor;

