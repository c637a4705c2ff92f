//! Scalar abstraction, complex linear algebra, MLPs and the differentiation tape.

pub mod complex;
pub mod mlp;
mod real;
pub mod tape;

pub use complex::{CMatrix, CVector};
pub use mlp::{Activation, Layer, Mlp, MlpNodes};
pub use real::Real;
pub use tape::{GradTape, Gradients, NodeId, TapeOp};
