//! Small differentiable network kernel with hand-derived gradients.
//!
//! Models are stacks of dense and LSTM layers stored as one flat parameter
//! vector ([`ParamSet`]) so that federated averaging can treat every model
//! the same way.

mod arch;
mod loss;
mod network;
mod optim;

pub use arch::{Activation, Arch, Gradients, Layer, ParamSet};
pub use loss::{
    cross_entropy_grad, cross_entropy_loss, log_sigmoid, mse_grad, mse_loss, sigmoid, softmax,
    softmax_backward, softplus, PROBABILITY_FLOOR,
};
pub use network::{backward, backward_trace, forward, forward_trace, Trace};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
