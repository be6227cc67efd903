//! Dense tensors, a recorded computation graph with reverse-mode gradients,
//! and the Adam optimizer.

mod adam;
mod graph;
mod params;
mod tensor;

pub use adam::AdamState;
pub use graph::{Backprop, Graph, Var, MASK_OFFSET};
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use tensor::Tensor;
