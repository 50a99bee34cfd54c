//! Dense tensors, a reverse-mode tape, and gradient / Hessian-vector products.

mod diff;
pub mod kernels;
mod params;
mod tape;
mod tensor;

pub use diff::{default_hvp_epsilon, grad, hvp};
pub use params::{ParamVector, Segment};
pub(crate) use params::unflatten;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Real, Tensor};
