//! Dense tensors with tape-based reverse-mode differentiation.

pub mod checkpoint;
mod gradcheck;
mod graph;
mod params;
mod value;

pub use gradcheck::{
    gradcheck, gradcheck_cross_entropy, CrossEntropyTerm, GradCheckEntry, GradCheckOptions, GradCheckReport,
    MIN_SAMPLED_SCALARS,
};
pub use graph::{BoundParams, Gradients, Graph, Pointwise, Var};
pub use params::ModelParams;
pub use value::Tensor;
