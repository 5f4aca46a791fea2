//! Minimal reverse-mode tensor engine covering the layers the counting
//! networks use, plus AdamW and the cosine learning-rate schedule.

pub mod gradcheck;
mod kernels;
pub mod layer;
pub mod optim;
pub mod params;
pub mod real;
pub mod tape;
pub mod tensor;

pub use layer::{conv_out_len, ConvGeom, LayerKind, LayerSpec};
pub use optim::{cosine_lr, AdamW};
pub use params::{BatchNormIds, Param, ParamId, ParamStore};
pub use real::Real;
pub use tape::{Mode, Tape, Var, BN_EPS, BN_MOMENTUM, PROB_FLOOR};
pub use tensor::Tensor;
