//! Small f64 tensor engine with reverse-mode differentiation.

mod graph;
mod params;
mod tensor;

pub use graph::{AttnLayout, AttnSegment, Graph, NodeId};
pub use params::{normal_init, xavier_init, Adam, Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
