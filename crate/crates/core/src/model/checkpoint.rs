//! Checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then raw little-endian `f32` data: every tensor in layout order,
//! followed by the optimizer slots if present.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::params::{ModelParams, TensorSpec};

const MAGIC: &[u8; 8] = b"PCNCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub loss_curve: Vec<f64>,
    /// Validation metric per epoch; `None` where validation was skipped.
    pub val_curve: Vec<Option<f64>>,
    #[serde(default)]
    pub note: String,
}

/// Optimizer moments, one flat vector per slot, aligned with the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: String,
    pub step: u64,
    #[serde(skip)]
    pub slots: Vec<Vec<f32>>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    metadata: TrainingMetadata,
    tensors: Vec<TensorSpec>,
    optimizer: Option<OptimizerHeader>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    kind: String,
    step: u64,
    slots: usize,
}

fn write_f32s(w: &mut impl Write, v: &[f32]) -> std::io::Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f32s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    optimizer: Option<&OptimizerState>,
) -> Result<()> {
    if let Some(o) = optimizer {
        if o.slots.iter().any(|s| s.len() != params.values.len()) {
            return Err(Error::Structural(
                "optimizer slot length differs from parameters".into(),
            ));
        }
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        config: params.config.clone(),
        metadata: params.metadata.clone(),
        tensors: params.layout().tensors().to_vec(),
        optimizer: optimizer.map(|o| OptimizerHeader {
            kind: o.kind.clone(),
            step: o.step,
            slots: o.slots.len(),
        }),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes())
        .map_err(io)?;
    w.write_all(&json).map_err(io)?;
    write_f32s(&mut w, &params.values).map_err(io)?;
    if let Some(o) = optimizer {
        for s in &o.slots {
            write_f32s(&mut w, s).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Loads a checkpoint, checking the stored tensor list against the layout the
/// stored config implies.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, Option<OptimizerState>)> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let bad = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated file".into()))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)
        .map_err(|_| bad("truncated file".into()))?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)
        .map_err(|_| bad("truncated file".into()))?;
    let hlen = u64::from_le_bytes(b8) as usize;
    if hlen > 64 << 20 {
        return Err(bad("header too large".into()));
    }
    let mut json = vec![0u8; hlen];
    r.read_exact(&mut json)
        .map_err(|_| bad("truncated header".into()))?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| bad(format!("bad header: {e}")))?;

    let expected = ModelParams::zeros(header.config.clone()).map_err(|e| bad(e.to_string()))?;
    let want = expected.layout().tensors();
    if want.len() != header.tensors.len() {
        return Err(bad(format!(
            "{} tensors stored, config implies {}",
            header.tensors.len(),
            want.len()
        )));
    }
    for (a, b) in want.iter().zip(&header.tensors) {
        if a.name != b.name || a.shape != b.shape || a.role != b.role {
            return Err(bad(format!(
                "tensor {} {:?} does not match config ({} {:?})",
                b.name, b.shape, a.name, a.shape
            )));
        }
    }
    let n = expected.layout().len();
    let values = read_f32s(&mut r, n).map_err(|_| bad("truncated tensor data".into()))?;
    let optimizer = match header.optimizer {
        Some(o) => {
            let mut slots = Vec::with_capacity(o.slots);
            for _ in 0..o.slots {
                slots.push(
                    read_f32s(&mut r, n).map_err(|_| bad("truncated optimizer data".into()))?,
                );
            }
            Some(OptimizerState {
                kind: o.kind,
                step: o.step,
                slots,
            })
        }
        None => None,
    };
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    let params = ModelParams::from_values(header.config, values, header.metadata)?;
    Ok((params, optimizer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::HeadKind;

    #[test]
    fn roundtrip_with_optimizer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut p = ModelParams::zeros(ModelConfig::tiny(HeadKind::Outlier)).unwrap();
        for (i, v) in p.values.iter_mut().enumerate() {
            *v = (i as f32 * 0.37).sin();
        }
        p.metadata.epoch = 3;
        p.metadata.loss_curve = vec![0.5, 0.4, 0.3];
        let opt = OptimizerState {
            kind: "adam".into(),
            step: 12,
            slots: vec![vec![0.25; p.values.len()], vec![1.5; p.values.len()]],
        };
        save_checkpoint(&path, &p, Some(&opt)).unwrap();
        let (q, o) = load_checkpoint(&path).unwrap();
        assert_eq!(q, p);
        assert_eq!(o.unwrap(), opt);
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"hello world, not a checkpoint").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));

        let p = ModelParams::zeros(ModelConfig::tiny(HeadKind::Displacement)).unwrap();
        save_checkpoint(&path, &p, None).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
