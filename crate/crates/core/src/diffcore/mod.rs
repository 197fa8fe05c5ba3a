//! Tensors, a per-pass reverse-mode tape, feedforward networks, the
//! adaptive-moment optimizer, and the checkpoint format.

pub mod checkpoint;
pub mod mlp;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use checkpoint::{load_net, save_net, NetManifest, NetRole};
pub use mlp::{grad_input, grad_params, Activation, MlpNet, NetGrads, NetVars};
pub use optim::MomentOptimizer;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
