//! Learned outlier removal and denoising for dense point clouds.
//!
//! Two small order-invariant patch networks do the work: one classifies each
//! point as an outlier, the other predicts a displacement that moves a noisy
//! point back toward the surface. The [`pipeline`] module chains them.

pub mod cloud;
pub mod corruption;
pub mod error;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod patch;
pub mod pipeline;
pub mod seed;
pub mod spatial;
pub mod training;

pub use cloud::PointCloud;
pub use error::{Error, Result};
pub use patch::{extract_patch, Patch};
pub use spatial::SpatialIndex;
