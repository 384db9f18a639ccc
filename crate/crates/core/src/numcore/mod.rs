//! Dense numeric core: tensors, parameters, layers, losses and Adam.

pub mod adam;
pub mod fastmath;
pub mod gru;
pub mod loss;
pub mod mlp;
pub mod params;
pub mod tensor;
pub mod weights;

pub use adam::{adam_step, AdamState};
pub use gru::{gru_cell, GruCell, GruStep};
pub use loss::{cross_entropy, sigmoid, softmax, weighted_bce};
pub use mlp::{mlp_forward, Activation, Linear, Mlp, MlpCache};
pub use params::{GradStore, ParamId, ParamStore};
pub use tensor::{gemm, MatMut, MatRef, Tensor2};
