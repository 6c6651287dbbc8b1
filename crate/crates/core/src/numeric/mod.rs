//! Dense tensors, reverse-mode differentiation, layers, losses and the Adam optimizer.

pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod linalg;
pub mod loss;
pub mod params;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use gradcheck::{check_gradients, check_gradients_with_store, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use layers::{Conv, Deconv, Dense, ResidualBlock, LEAKY_SLOPE};
pub use params::ParameterStore;
pub use tensor::Tensor;
