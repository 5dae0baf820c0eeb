//! Dense tensors, a recorded computation graph with reverse-mode gradients,
//! and a central finite-difference gradient checker.

mod gradcheck;
mod graph;
pub mod ops;
mod params;
mod real;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with, relative_error, GradCheckReport, ParamCheck, REL_ERROR_FLOOR};
pub use graph::{Gradients, Graph, Var};
pub use params::{ParamId, ParamStore};
pub use real::Real;
pub use tensor::Tensor;
