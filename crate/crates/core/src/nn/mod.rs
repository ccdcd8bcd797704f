//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Graph`] records one forward computation over parameters held in a
//! [`ParameterStore`]; [`Graph::backward`] returns per-parameter
//! [`Gradients`]. Everything is generic over [`Real`] so the same model code
//! runs in `f32` for training and in `f64` for finite-difference checks.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod layers;
pub mod optim;
mod params;
mod real;
mod tensor;

pub use checkpoint::{Checkpoint, NamedTensor};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use graph::{Graph, NodeId};
pub use optim::AdamW;
pub use params::{Gradients, Init, ParamId, ParameterStore};
pub use real::{gemm, MatMut, MatRef, Real};
pub use tensor::Tensor;

/// Layer-norm variance epsilon.
pub const LN_EPS: f64 = 1e-5;
