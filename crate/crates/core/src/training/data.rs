use crate::cloud::PointCloud;
use crate::corruption::dataset::DatasetManifest;
use crate::error::{Error, Result};

/// One corrupted cloud with its clean counterpart. For outlier training the
/// corrupted cloud carries labels.
#[derive(Debug, Clone)]
pub struct TrainingShape {
    pub name: String,
    pub noisy: PointCloud,
    pub clean: PointCloud,
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub shapes: Vec<TrainingShape>,
}

impl TrainingSet {
    pub fn new(shapes: Vec<TrainingShape>) -> Result<Self> {
        if shapes.is_empty() {
            return Err(Error::Config("training set has no shapes".into()));
        }
        Ok(Self { shapes })
    }

    /// Loads every manifest entry as one training shape.
    pub fn from_manifest(manifest: &DatasetManifest) -> Result<Self> {
        let mut shapes = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let (clean, noisy) = manifest.load_pair(e)?;
            let name = std::path::Path::new(&e.noisy_path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| e.shape_id.clone());
            shapes.push(TrainingShape { name, noisy, clean });
        }
        Self::new(shapes)
    }

    pub fn total_points(&self) -> usize {
        self.shapes.iter().map(|s| s.noisy.len()).sum()
    }
}
