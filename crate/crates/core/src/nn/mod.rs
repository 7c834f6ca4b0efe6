//! Minimal dense numerical engine: matrices, a gradient tape, layers,
//! the Adam optimizer, finite-difference gradient checks and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
mod matrix;
pub mod params;
pub mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
pub use layers::{
    apply_norm_updates, dropout, fc_forward, layer_norm_forward, Activation, DropoutSpec, FcLayer,
    Mode, NormKind, NormLayer, NormUpdate,
};
pub use matrix::Matrix;
pub use params::{ParamId, ParamSet};
pub use tape::{Gradients, Tape, Var};
