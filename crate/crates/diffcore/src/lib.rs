//! Minimal dense-tensor numerics with reverse-mode differentiation.
//!
//! The operation set is deliberately closed: it covers exactly what the
//! pillar tracker needs (linear layers, batch norm, set max-pooling, 3x3 and
//! 1x1 convolutions, BEV scatter/gather, linear attention and the two
//! training losses). Computation is recorded on a [`Graph`] tape that borrows
//! a [`ParamStore`] read-only; [`Graph::backward`] returns [`Gradients`]
//! which are reduced and applied by the caller, so several graphs may share
//! one store.

mod adam;
mod checkpoint;
mod error;
mod gemm;
mod gradcheck;
mod graph;
pub mod kernels;
mod param;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointRecord, RecordKind};
pub use error::{DiffError, Result};
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use graph::{BatchNormMode, Graph, StatUpdate, Var};
pub use param::{Buffer, BufferId, Gradients, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

/// Scalar type used for every tensor value.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
/// Scalar type used for every tensor value.
#[cfg(feature = "f32")]
pub type Real = f32;

/// Checkpoint dtype tag of [`Real`].
#[cfg(not(feature = "f32"))]
pub const REAL_DTYPE: u8 = 0;
#[cfg(feature = "f32")]
pub const REAL_DTYPE: u8 = 1;
