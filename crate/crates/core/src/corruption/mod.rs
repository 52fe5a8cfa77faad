//! Synthetic training and test data: surface sampling, additive noise, and
//! outlier injection, plus the dataset manifest that records how every file
//! was produced.

pub mod dataset;
pub mod mesh;
pub mod noise;
pub mod outliers;
pub mod shapes;

pub use dataset::{generate_dataset, DatasetConfig, DatasetManifest, ManifestEntry, Split, Task};
pub use mesh::{sample_mesh, Mesh};
pub use noise::{add_noise, NoiseKind, NoiseSpec};
pub use outliers::{inject_outliers, OutlierKind, OutlierReport, OutlierSpec};
