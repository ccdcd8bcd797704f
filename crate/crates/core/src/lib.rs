//! Native triangle-mesh generation with pivot-vertex guidance.
//!
//! The crate covers the whole pipeline at desk scale:
//!
//! - [`mesh`]: OBJ I/O, normalization, 7-bit quantization, canonical ordering
//!   and the flat face-sequence representation.
//! - [`pivot`]: vertex degrees and degree-based pivot selection / dropping.
//! - [`nn`]: a small dense-tensor engine with reverse-mode autodiff, transformer
//!   layers, AdamW, gradient checking and checkpoints.
//! - [`autoencoder`]: the face-level transformer tokenizer with residual vector
//!   quantization and hierarchical face→vertex decoding.
//! - [`generator`]: the autoregressive transformer over pivot tokens followed by
//!   mesh tokens, with structurally masked sampling.
//! - [`eval`]: surface point sampling, Chamfer distance, MMD / COV / 1-NNA and
//!   novelty analysis.
//! - [`dataset`] and [`pipeline`]: the dataset container and the command
//!   pipelines used by the `pivotmesh` binary.
//!
//! Runnable walkthroughs for each capability live in `examples/`.

pub mod autoencoder;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod generator;
pub mod mesh;
pub mod nn;
pub mod pipeline;
pub mod pivot;
pub mod rng;

pub use error::{Error, Result};
