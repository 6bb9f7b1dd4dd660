//! Tensors, tape-based reverse-mode differentiation, SGD and gradient checking.

mod gradcheck;
mod optim;
mod param;
mod real;
mod tape;
mod tensor;

#[cfg(test)]
mod tests;

pub use gradcheck::{grad_check, GradCheckConfig, GradReport, ParamReport};
pub use optim::sgd_step;
pub use param::{ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tape::{ConvGeom, Tape, Var};
pub use tensor::{numel, Tensor};
