//! Numeric substrate: parameters, a reverse-mode tape, the layers the models are
//! built from, Adam, and a finite-difference gradient checker.

pub mod graph;
pub mod layers;
pub mod optim;
pub mod tensor;

pub use graph::{leaky_relu, sigmoid, softmax, Graph, Var};
pub use layers::{affine, embed, BiGruAttention, Encoding, GruCell, Linear, Mlp, TokenInput, LEAKY_SLOPE};
pub use optim::{adam_step, add_l2_grad, batch_gradients, fit_batch, gradient_check, Adam, AdamConfig, AdamState};
pub use tensor::{Grads, Init, ParamId, ParamStore, Parameter, Tensor};
