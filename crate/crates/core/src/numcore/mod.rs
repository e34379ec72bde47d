//! Tensors, taped autodiff, named parameter sets and small dense linear algebra.

pub mod fdcheck;
pub mod graph;
pub mod linalg;
pub mod params;
pub mod tensor;

pub use fdcheck::{finite_diff_check, FdReport};
pub use graph::{Graph, Var};
pub use linalg::{spectral_norm, SmallMatrix};
pub use params::{grad, BoundParams, GradSet, ParamSet, TensorSet};
pub use tensor::Tensor;
