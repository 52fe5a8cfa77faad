use rand::Rng;

use crate::error::Result;
use crate::model::checkpoint::TrainingMetadata;
use crate::model::config::ModelConfig;
use crate::model::params::{ModelParams, TensorRole};
use crate::seed;
use crate::training::config::InitScheme;

/// Fresh parameters. Weights are drawn per tensor from a stream derived from
/// `(seed, tensor position)`; biases and shifts are zero, batch-norm scales
/// one. The final layers of both transformers start at zero so the initial
/// rotation and feature transform are the identity.
pub fn init_params(config: &ModelConfig, scheme: InitScheme, seed: u64) -> Result<ModelParams> {
    let mut p = ModelParams::zeros(config.clone())?;
    let zeroed: Vec<String> = p
        .network()
        .transformer_output_tensors()
        .into_iter()
        .map(String::from)
        .collect();
    let tensors = p.layout().tensors().to_vec();
    for (t_idx, t) in tensors.iter().enumerate() {
        if t.role != TensorRole::Weight || zeroed.contains(&t.name) {
            continue;
        }
        let bound = match scheme {
            InitScheme::KaimingUniform => (6.0 / t.fan_in() as f64).sqrt(),
            InitScheme::SmallUniform => 0.001,
        } as f32;
        let mut rng = seed::rng(seed, &[t_idx as u64]);
        for v in &mut p.values[t.range()] {
            *v = rng.random_range(-bound..=bound);
        }
    }
    p.metadata = TrainingMetadata {
        seed,
        ..TrainingMetadata::default()
    };
    Ok(p)
}
