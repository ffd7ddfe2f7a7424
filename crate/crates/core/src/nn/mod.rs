//! Minimal deterministic feedforward training engine.

pub mod engine;
pub mod epoch;
pub mod eval;
pub mod optim;
pub mod params;
pub mod spec;

pub use engine::{
    backward, forward, loss_and_grad, softmax_cross_entropy, ActivationCache, Batch, ForwardOutput,
};
pub use epoch::{backprop_epoch, Proximal};
pub use eval::{argmax, evaluate, Evaluation};
pub use optim::{sgd_step, SgdHyper, SgdState};
pub use params::{init_params, LayerPartition, LayerSlice, ParamVector};
pub use spec::{Layer, ModelSpec};
