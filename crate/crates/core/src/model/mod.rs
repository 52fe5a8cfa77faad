//! The order-invariant patch network shared by the outlier and displacement
//! heads.
//!
//! Pipeline per patch: a quaternion spatial transformer rotates the patch to a
//! canonical frame; a shared per-point MLP of residual blocks (with a second,
//! feature-space transformer part way through) maps every row to a feature;
//! features are summed over all rows; a residual regressor maps the pooled
//! vector to the head output. Displacements are rotated back to the input
//! frame at the end.
//!
//! Everything is written out by hand with explicit backward passes so the
//! same code runs in `f32` for training and `f64` for gradient checks.

pub mod checkpoint;
pub mod config;
pub mod layers;
pub mod network;
pub mod params;
pub mod predict;
pub mod quaternion;
pub mod scalar;

pub use checkpoint::{load_checkpoint, save_checkpoint, OptimizerState, TrainingMetadata};
pub use config::{Activation, HeadKind, ModelConfig, Normalization};
pub use network::{BatchStats, ForwardCache, Mode, Network};
pub use params::{ModelParams, ParamLayout, TensorRole, TensorSpec};
pub use predict::{
    patches_to_input, predict_displacement, predict_displacements, predict_outlier_probabilities,
    predict_outlier_probability, sigmoid,
};
pub use quaternion::{quaternion_to_rotation, Quaternion};
pub use scalar::Scalar;
