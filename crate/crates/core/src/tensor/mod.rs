//! Dense double-precision arrays with tape-based reverse-mode
//! differentiation.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles during a
//! forward pass; [`Tape::backward`] then walks the records in reverse and
//! returns the gradient of a scalar loss with respect to every leaf that was
//! registered with `requires_grad`. Parameters live outside the tape in a
//! [`ParamStore`] and are re-registered as leaves for each forward pass.

mod array;
mod conv;
mod gemm;
mod gru;
mod loss;
mod norm;
mod ops;
mod pool;
mod tape;

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod init;
pub mod params;

pub use adam::Adam;
pub use array::Tensor;
pub use checkpoint::Checkpoint;
pub use gru::GruWeights;
pub use norm::BatchStats;
pub use params::ParamStore;
pub use tape::{Gradients, Tape, Var};
