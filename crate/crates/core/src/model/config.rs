use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    LeakyRelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    None,
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    /// One logit: outlier probability after a sigmoid.
    Outlier,
    /// Three values: displacement of the patch center in patch units.
    Displacement,
}

impl HeadKind {
    pub fn output_dim(self) -> usize {
        match self {
            HeadKind::Outlier => 1,
            HeadKind::Displacement => 3,
        }
    }
}

/// Architecture description. Widths follow PCPNet; every layer is a residual
/// block of `residual_block_depth` linear layers (depth 1 gives plain layers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Rows per patch.
    pub m: usize,
    pub head: HeadKind,
    pub point_feature_widths: Vec<usize>,
    /// Index of the extractor block whose output the feature transformer acts on.
    pub feature_stn_after: Option<usize>,
    pub regressor_widths: Vec<usize>,
    pub residual_block_depth: usize,
    pub use_qstn: bool,
    pub stn_point_widths: Vec<usize>,
    pub stn_regressor_widths: Vec<usize>,
    pub activation: Activation,
    pub normalization: Normalization,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl ModelConfig {
    /// Full-size network.
    pub fn pcpnet(head: HeadKind) -> Self {
        Self {
            m: 500,
            head,
            point_feature_widths: vec![64, 64, 64, 128, 1024],
            feature_stn_after: Some(1),
            regressor_widths: vec![512, 256],
            residual_block_depth: 2,
            use_qstn: true,
            stn_point_widths: vec![64, 128, 1024],
            stn_regressor_widths: vec![512, 256],
            activation: Activation::Relu,
            normalization: Normalization::Batch,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    /// Small network for workstation-scale experiments and tests.
    pub fn tiny(head: HeadKind) -> Self {
        Self {
            m: 64,
            point_feature_widths: vec![16, 16, 32, 64],
            feature_stn_after: Some(1),
            regressor_widths: vec![64, 32],
            stn_point_widths: vec![16, 32, 64],
            stn_regressor_widths: vec![32, 16],
            ..Self::pcpnet(head)
        }
    }

    pub fn output_dim(&self) -> usize {
        self.head.output_dim()
    }

    pub fn feature_stn_dim(&self) -> Option<usize> {
        self.feature_stn_after.map(|i| self.point_feature_widths[i])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.m == 0 {
            return bad("patch cardinality m must be >= 1");
        }
        if self.point_feature_widths.is_empty() {
            return bad("point_feature_widths must not be empty");
        }
        let lists = [
            &self.point_feature_widths,
            &self.regressor_widths,
            &self.stn_point_widths,
            &self.stn_regressor_widths,
        ];
        if lists.iter().any(|l| l.contains(&0)) {
            return bad("layer widths must be positive");
        }
        if let Some(i) = self.feature_stn_after {
            if i >= self.point_feature_widths.len() {
                return bad("feature_stn_after indexes past the extractor");
            }
        }
        if (self.use_qstn || self.feature_stn_after.is_some()) && self.stn_point_widths.is_empty() {
            return bad("transformer networks need stn_point_widths");
        }
        if self.residual_block_depth == 0 {
            return bad("residual_block_depth must be >= 1");
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("bn_eps must be > 0 and bn_momentum in [0, 1]");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::pcpnet(HeadKind::Outlier).validate().unwrap();
        ModelConfig::tiny(HeadKind::Displacement)
            .validate()
            .unwrap();
        assert_eq!(
            ModelConfig::pcpnet(HeadKind::Displacement).feature_stn_dim(),
            Some(64)
        );
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = ModelConfig::tiny(HeadKind::Outlier);
        c.feature_stn_after = Some(9);
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny(HeadKind::Outlier);
        c.regressor_widths = vec![0];
        assert!(c.validate().is_err());
    }
}
