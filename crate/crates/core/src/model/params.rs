//! Flat parameter storage.
//!
//! All tensors of a network live in one contiguous vector; the layout records
//! each tensor's name, shape, offset, and role in declaration order. Gradients
//! and optimizer state use the same layout, which keeps the optimizer, the
//! checkpoint format, and finite-difference checks trivial.

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::checkpoint::TrainingMetadata;
use crate::model::config::ModelConfig;
use crate::model::network::Network;
use crate::model::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TensorRole {
    Weight,
    Bias,
    /// Batch-norm scale (gamma).
    Scale,
    /// Batch-norm shift (beta).
    Shift,
    RunningMean,
    RunningVar,
}

impl TensorRole {
    pub fn is_learnable(self) -> bool {
        !matches!(self, TensorRole::RunningMean | TensorRole::RunningVar)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(skip)]
    pub offset: usize,
    pub role: TensorRole,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.numel()
    }

    /// Input width of a weight matrix.
    pub fn fan_in(&self) -> usize {
        self.shape[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamLayout {
    tensors: Vec<TensorSpec>,
    len: usize,
}

impl ParamLayout {
    pub(crate) fn add(&mut self, name: String, shape: Vec<usize>, role: TensorRole) -> TensorId {
        let spec = TensorSpec {
            name,
            shape,
            offset: self.len,
            role,
        };
        self.len += spec.numel();
        self.tensors.push(spec);
        TensorId(self.tensors.len() - 1)
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn spec(&self, id: TensorId) -> &TensorSpec {
        &self.tensors[id.0]
    }

    /// Total number of scalars.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Mask over the flat vector: true where the entry is learnable.
    pub fn learnable_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.len];
        for t in &self.tensors {
            if t.role.is_learnable() {
                mask[t.range()].iter_mut().for_each(|m| *m = true);
            }
        }
        mask
    }

    pub fn mat<'a, T>(&self, data: &'a [T], id: TensorId) -> ArrayView2<'a, T> {
        let s = self.spec(id);
        ArrayView2::from_shape((s.shape[0], s.shape[1]), &data[s.range()]).expect("layout shape")
    }

    pub fn vec<'a, T>(&self, data: &'a [T], id: TensorId) -> ArrayView1<'a, T> {
        let s = self.spec(id);
        ArrayView1::from(&data[s.range()])
    }

    pub fn mat_mut<'a, T>(&self, data: &'a mut [T], id: TensorId) -> ArrayViewMut2<'a, T> {
        let s = self.spec(id);
        ArrayViewMut2::from_shape((s.shape[0], s.shape[1]), &mut data[s.range()])
            .expect("layout shape")
    }

    pub fn vec_mut<'a, T>(&self, data: &'a mut [T], id: TensorId) -> ArrayViewMut1<'a, T> {
        let s = self.spec(id);
        ArrayViewMut1::from(&mut data[s.range()])
    }
}

/// All tensors of one network head plus its architecture and training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub values: Vec<f32>,
    pub metadata: TrainingMetadata,
    network: Network,
}

impl ModelParams {
    /// Parameters with the layout implied by `config`, filled with neutral
    /// values: zero weights and shifts, unit scales and running variances.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let network = Network::new(&config)?;
        let mut values = vec![0.0f32; network.layout().len()];
        for t in network.layout().tensors() {
            if matches!(t.role, TensorRole::Scale | TensorRole::RunningVar) {
                values[t.range()].iter_mut().for_each(|v| *v = 1.0);
            }
        }
        Ok(Self {
            config,
            values,
            metadata: TrainingMetadata::default(),
            network,
        })
    }

    pub fn from_values(
        config: ModelConfig,
        values: Vec<f32>,
        metadata: TrainingMetadata,
    ) -> Result<Self> {
        let network = Network::new(&config)?;
        if values.len() != network.layout().len() {
            return Err(Error::Structural(format!(
                "{} parameter values for a layout of {}",
                values.len(),
                network.layout().len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                layer: network
                    .layout()
                    .tensors()
                    .iter()
                    .find(|t| t.range().contains(&i))
                    .map(|t| t.name.clone())
                    .unwrap_or_default(),
            });
        }
        Ok(Self {
            config,
            values,
            metadata,
            network,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn layout(&self) -> &ParamLayout {
        self.network.layout()
    }

    /// Every scalar set to zero, including batch-norm scales.
    pub fn all_zero(config: ModelConfig) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        for t in p.network.layout().tensors().to_vec() {
            if t.role.is_learnable() {
                p.values[t.range()].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok(p)
    }

    pub fn cast<T: Scalar>(&self) -> Vec<T> {
        self.values
            .iter()
            .map(|&v| T::from_f32(v).expect("finite"))
            .collect()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f32]> {
        self.layout()
            .tensors()
            .iter()
            .find(|t| t.name == name)
            .map(|t| &self.values[t.range()])
    }
}
