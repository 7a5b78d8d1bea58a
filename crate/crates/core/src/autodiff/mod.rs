//! Reverse-mode differentiation engine and neural primitives.

pub mod checkpoint;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use nn::{
    additive_attention, dropout, gru_cell, softmax_nll, AttentionParams, GruParams, Linear,
};
pub use optim::{clip_global_norm, Adam, Sgd};
pub use params::{Gradients, Init, ParamId, ParameterStore};
pub use tape::{Backward, Tape, Var};
pub use tensor::{Real, Tensor};
