//! Dataset generation and the JSON manifest describing it.
//!
//! The manifest records, for every corrupted cloud, the clean counterpart and
//! its noise and outlier parameters including derived seeds, so each file
//! can be regenerated byte for byte from the mesh and the manifest alone.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::corruption::mesh::{sample_mesh, Mesh};
use crate::corruption::noise::{
    add_noise, NoiseKind, NoiseSpec, DEFAULT_ANISOTROPY, DEFAULT_DIRECTION,
};
use crate::corruption::outliers::{
    inject_outliers, OutlierKind, OutlierSpec, DEFAULT_BBOX_SCALE, DEFAULT_OUTLIER_SIGMA,
    DEFAULT_RETRY_CAP,
};
use crate::error::{Error, Result};
use crate::io::{labels_path, load_cloud, save_cloud, CloudFormat};
use crate::seed;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

pub const DENOISE_NOISE_LEVELS: [f64; 6] = [0.0, 0.0025, 0.005, 0.01, 0.015, 0.025];
pub const OUTLIER_NOISE_LEVELS: [f64; 4] = [0.0, 0.0025, 0.005, 0.01];
pub const OUTLIER_FRACTIONS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Denoise,
    Outliers,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Dataset recipe. Unset options fall back to per-task defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub task: Task,
    #[serde(default = "default_split")]
    pub split: Split,
    #[serde(default)]
    pub points_per_shape: Option<usize>,
    #[serde(default)]
    pub noise_levels: Option<Vec<f64>>,
    #[serde(default = "default_noise_kind")]
    pub noise_kind: NoiseKind,
    #[serde(default = "default_direction")]
    pub noise_direction: [f64; 3],
    #[serde(default = "default_anisotropy")]
    pub noise_anisotropy: [f64; 3],
    #[serde(default)]
    pub outlier_fractions: Option<Vec<f64>>,
    #[serde(default = "default_outlier_kind")]
    pub outlier_kind: OutlierKind,
    #[serde(default = "default_outlier_sigma")]
    pub outlier_sigma_fraction: f64,
    #[serde(default = "default_bbox_scale")]
    pub bbox_scale: f64,
    /// `None` uses the additive noise level of the same cloud.
    #[serde(default)]
    pub rejection_threshold_fraction: Option<f64>,
    #[serde(default = "default_retry_cap")]
    pub retry_cap: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_format")]
    pub format: CloudFormat,
}

fn default_split() -> Split {
    Split::Train
}
fn default_noise_kind() -> NoiseKind {
    NoiseKind::GaussianIsotropic
}
fn default_direction() -> [f64; 3] {
    DEFAULT_DIRECTION
}
fn default_anisotropy() -> [f64; 3] {
    DEFAULT_ANISOTROPY
}
fn default_outlier_kind() -> OutlierKind {
    OutlierKind::Gaussian
}
fn default_outlier_sigma() -> f64 {
    DEFAULT_OUTLIER_SIGMA
}
fn default_bbox_scale() -> f64 {
    DEFAULT_BBOX_SCALE
}
fn default_retry_cap() -> usize {
    DEFAULT_RETRY_CAP
}
fn default_format() -> CloudFormat {
    CloudFormat::Xyz
}

impl DatasetConfig {
    pub fn denoising() -> Self {
        Self::for_task(Task::Denoise)
    }

    pub fn outliers() -> Self {
        Self::for_task(Task::Outliers)
    }

    fn for_task(task: Task) -> Self {
        Self {
            task,
            split: Split::Train,
            points_per_shape: None,
            noise_levels: None,
            noise_kind: NoiseKind::GaussianIsotropic,
            noise_direction: DEFAULT_DIRECTION,
            noise_anisotropy: DEFAULT_ANISOTROPY,
            outlier_fractions: None,
            outlier_kind: OutlierKind::Gaussian,
            outlier_sigma_fraction: DEFAULT_OUTLIER_SIGMA,
            bbox_scale: DEFAULT_BBOX_SCALE,
            rejection_threshold_fraction: None,
            retry_cap: DEFAULT_RETRY_CAP,
            master_seed: 0,
            format: CloudFormat::Xyz,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn points_per_shape(&self) -> usize {
        self.points_per_shape.unwrap_or(match self.task {
            Task::Denoise => 100_000,
            Task::Outliers => 140_000,
        })
    }

    pub fn noise_levels(&self) -> Vec<f64> {
        self.noise_levels
            .clone()
            .unwrap_or_else(|| match self.task {
                Task::Denoise => DENOISE_NOISE_LEVELS.to_vec(),
                Task::Outliers => OUTLIER_NOISE_LEVELS.to_vec(),
            })
    }

    pub fn outlier_fractions(&self) -> Vec<f64> {
        self.outlier_fractions
            .clone()
            .unwrap_or_else(|| OUTLIER_FRACTIONS.to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        if self.points_per_shape() == 0 {
            return Err(Error::Config("points_per_shape must be >= 1".into()));
        }
        let levels = self.noise_levels();
        if levels.is_empty() || levels.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config(
                "noise_levels must be a non-empty list of values >= 0".into(),
            ));
        }
        if self.task == Task::Outliers {
            let f = self.outlier_fractions();
            if f.is_empty() || f.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::Config(
                    "outlier_fractions must be a non-empty list in [0, 1]".into(),
                ));
            }
        }
        Ok(())
    }

    fn noise_spec(&self, sigma: f64, seed: u64) -> NoiseSpec {
        match self.noise_kind {
            NoiseKind::GaussianIsotropic => NoiseSpec::isotropic(sigma, seed),
            NoiseKind::GaussianDirectional => {
                NoiseSpec::directional(sigma, self.noise_direction, self.noise_anisotropy, seed)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub shape_id: String,
    pub clean_path: String,
    pub noisy_path: String,
    pub labels_path: Option<String>,
    pub sample_seed: u64,
    pub noise_spec: NoiseSpec,
    pub outlier_spec: Option<OutlierSpec>,
    pub point_count: usize,
    pub outlier_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub task: Task,
    pub split: Split,
    pub master_seed: u64,
    pub format: CloudFormat,
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Directory that relative entry paths are resolved against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Structural(format!("{}: {e}", path.display())))?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Structural(format!(
                "manifest schema version {} is not supported (expected {MANIFEST_SCHEMA_VERSION})",
                m.schema_version
            )));
        }
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Checks that every referenced file exists and holds the recorded count.
    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            for rel in [&e.clean_path, &e.noisy_path] {
                let p = self.resolve(rel);
                let cloud = load_cloud(&p, self.format)?;
                if cloud.len() != e.point_count {
                    return Err(Error::DataMismatch(format!(
                        "{} holds {} points, manifest says {}",
                        p.display(),
                        cloud.len(),
                        e.point_count
                    )));
                }
            }
            if let Some(l) = &e.labels_path {
                let p = self.resolve(l);
                if !p.exists() {
                    return Err(Error::DataMismatch(format!(
                        "missing label file {}",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load_pair(&self, entry: &ManifestEntry) -> Result<(PointCloud, PointCloud)> {
        let clean = load_cloud(&self.resolve(&entry.clean_path), self.format)?;
        let noisy = load_cloud(&self.resolve(&entry.noisy_path), self.format)?;
        Ok((clean, noisy))
    }
}

/// Regenerates the `(clean, corrupted)` pair an entry describes.
pub fn regenerate_entry(mesh: &Mesh, entry: &ManifestEntry) -> Result<(PointCloud, PointCloud)> {
    let clean = sample_mesh(mesh, entry.point_count, entry.sample_seed)?;
    let noisy = add_noise(&clean, &entry.noise_spec)?;
    let noisy = match &entry.outlier_spec {
        Some(spec) => inject_outliers(&noisy, spec, &clean)?.0,
        None => noisy,
    };
    Ok((clean, noisy))
}

fn tag(x: f64) -> String {
    format!("{x:.4}")
}

struct ShapeOutput {
    entries: Vec<ManifestEntry>,
    warnings: Vec<String>,
}

/// Samples, corrupts, and writes one dataset split for the given shapes.
///
/// Denoising: per shape one clean cloud and one noisy cloud per noise level.
/// Outliers: per shape one clean cloud and one labeled cloud per
/// (noise level, outlier fraction) pair. On any failure every file written so
/// far is removed.
pub fn generate_dataset(
    shapes: &[(String, Mesh)],
    config: &DatasetConfig,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    config.validate()?;
    if shapes.is_empty() {
        return Err(Error::Config("no shapes given".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let results: Vec<Result<ShapeOutput>> = shapes
        .par_iter()
        .enumerate()
        .map(|(s, (name, mesh))| generate_shape(s as u64, name, mesh, config, out_dir))
        .collect();

    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    let mut failure = None;
    for r in results {
        match r {
            Ok(out) => {
                entries.extend(out.entries);
                warnings.extend(out.warnings);
            }
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    }
    if let Some(e) = failure {
        cleanup(shapes, config, out_dir);
        return Err(e);
    }
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        task: config.task,
        split: config.split,
        master_seed: config.master_seed,
        format: config.format,
        entries,
        warnings,
        root: out_dir.to_path_buf(),
    };
    if let Err(e) = manifest.save(&out_dir.join("manifest.json")) {
        cleanup(shapes, config, out_dir);
        return Err(e);
    }
    Ok(manifest)
}

fn file_names(name: &str, config: &DatasetConfig) -> Vec<String> {
    let ext = config.format.extension();
    let mut v = vec![format!("{name}_clean.{ext}")];
    for &sigma in &config.noise_levels() {
        match config.task {
            Task::Denoise => v.push(format!("{name}_noise{}.{ext}", tag(sigma))),
            Task::Outliers => {
                for &f in &config.outlier_fractions() {
                    let base = format!("{name}_noise{}_outliers{}", tag(sigma), tag(f));
                    v.push(format!("{base}.{ext}"));
                    v.push(format!("{base}.outliers"));
                }
            }
        }
    }
    v
}

fn cleanup(shapes: &[(String, Mesh)], config: &DatasetConfig, out_dir: &Path) {
    for (name, _) in shapes {
        for f in file_names(name, config) {
            let _ = fs::remove_file(out_dir.join(f));
        }
    }
    let _ = fs::remove_file(out_dir.join("manifest.json"));
}

fn generate_shape(
    s: u64,
    name: &str,
    mesh: &Mesh,
    config: &DatasetConfig,
    out_dir: &Path,
) -> Result<ShapeOutput> {
    let ext = config.format.extension();
    let n = config.points_per_shape();
    let sample_seed = seed::derive(config.master_seed, &[s, 1]);
    let clean = sample_mesh(mesh, n, sample_seed)?;
    let clean_name = format!("{name}_clean.{ext}");
    save_cloud(&clean, &out_dir.join(&clean_name), config.format)?;

    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for (li, &sigma) in config.noise_levels().iter().enumerate() {
        let noise_spec =
            config.noise_spec(sigma, seed::derive(config.master_seed, &[s, 2, li as u64]));
        let noisy = add_noise(&clean, &noise_spec)?;
        match config.task {
            Task::Denoise => {
                let noisy_name = format!("{name}_noise{}.{ext}", tag(sigma));
                save_cloud(&noisy, &out_dir.join(&noisy_name), config.format)?;
                entries.push(ManifestEntry {
                    shape_id: name.to_string(),
                    clean_path: clean_name.clone(),
                    noisy_path: noisy_name,
                    labels_path: None,
                    sample_seed,
                    noise_spec,
                    outlier_spec: None,
                    point_count: n,
                    outlier_count: 0,
                });
            }
            Task::Outliers => {
                for (fi, &fraction) in config.outlier_fractions().iter().enumerate() {
                    let spec = OutlierSpec {
                        kind: config.outlier_kind,
                        fraction,
                        sigma_fraction: config.outlier_sigma_fraction,
                        bbox_scale: config.bbox_scale,
                        rejection_threshold_fraction: config
                            .rejection_threshold_fraction
                            .unwrap_or(sigma),
                        retry_cap: config.retry_cap,
                        seed: seed::derive(config.master_seed, &[s, 3, li as u64, fi as u64]),
                    };
                    let (corrupted, report) = inject_outliers(&noisy, &spec, &clean)?;
                    if let Some(w) = report.warning {
                        warnings.push(format!("{name} noise {sigma} outliers {fraction}: {w}"));
                    }
                    let noisy_name =
                        format!("{name}_noise{}_outliers{}.{ext}", tag(sigma), tag(fraction));
                    let noisy_path = out_dir.join(&noisy_name);
                    save_cloud(&corrupted, &noisy_path, config.format)?;
                    let lp = labels_path(&noisy_path);
                    entries.push(ManifestEntry {
                        shape_id: name.to_string(),
                        clean_path: clean_name.clone(),
                        noisy_path: noisy_name,
                        labels_path: lp.file_name().map(|f| f.to_string_lossy().into_owned()),
                        sample_seed,
                        noise_spec: noise_spec.clone(),
                        outlier_spec: Some(spec),
                        point_count: n,
                        outlier_count: report.accepted,
                    });
                }
            }
        }
    }
    Ok(ShapeOutput { entries, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corruption::shapes;

    #[test]
    fn config_defaults_per_task() {
        let d = DatasetConfig::denoising();
        assert_eq!(d.noise_levels().len(), 6);
        assert_eq!(d.points_per_shape(), 100_000);
        let o = DatasetConfig::outliers();
        assert_eq!(o.noise_levels().len(), 4);
        assert_eq!(o.outlier_fractions().len(), 9);
        assert_eq!(o.points_per_shape(), 140_000);
    }

    #[test]
    fn config_parses_toml() {
        let c = DatasetConfig::from_toml(
            "task = \"outliers\"\npoints_per_shape = 500\noutlier_fractions = [0.3]\n",
        )
        .unwrap();
        assert_eq!(c.task, Task::Outliers);
        assert_eq!(c.outlier_fractions(), vec![0.3]);
        assert!(DatasetConfig::from_toml("task = \"denoise\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn single_clean_level_copies_clean_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = DatasetConfig::denoising();
        cfg.points_per_shape = Some(300);
        cfg.noise_levels = Some(vec![0.0]);
        let shapes = vec![("cube".to_string(), shapes::builtin("cube").unwrap())];
        let m = generate_dataset(&shapes, &cfg, dir.path()).unwrap();
        assert_eq!(m.entries.len(), 1);
        let e = &m.entries[0];
        let a = fs::read(m.resolve(&e.clean_path)).unwrap();
        let b = fs::read(m.resolve(&e.noisy_path)).unwrap();
        assert_eq!(a, b);
        m.validate().unwrap();
    }
}
