//! Minimal differentiable substrate for the two detector networks.

mod checkpoint;
mod gradcheck;
mod graph;
mod registry;
mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckReport, GRAD_CHECK_FLOOR};
pub use graph::{sigmoid, softmax_matrix, CustomOp, Graph, Padding, Var};
pub use registry::{Gradients, ParamId, Parameter, ParameterRegistry};
pub use tensor::Tensor;
