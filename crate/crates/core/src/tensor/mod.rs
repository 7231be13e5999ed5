//! Dense tensors with tape-based reverse-mode differentiation, the layer
//! building blocks the models are assembled from, AdamW, and checkpoints.

pub mod checkpoint;
mod graph;
pub mod kernels;
pub mod nn;
pub mod optim;
mod params;
mod value;

pub use graph::{FocalSpec, GatherPlan, GatherPlanBuilder, Gradients, Graph, Var};
pub use params::{Bound, ParamId, ParamStore};
pub use value::Tensor;
