//! Reverse-mode automatic differentiation over small dense matrices.
//!
//! Every graph (or every mask-optimisation step) records its forward pass on
//! its own [`Tape`]; gradients from several tapes are reduced by the caller in
//! a fixed order, so batched training stays deterministic.

mod adam;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
