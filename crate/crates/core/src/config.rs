//! Run configuration shared by the CLI commands.

use serde::{Deserialize, Serialize};

use crate::decoder::DecoderConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::metrics::WeightMode;
use crate::model::ModelConfig;
use crate::nn::OptimizerConfig;
use crate::sampler::SamplingConfig;
use crate::synth::SynthConfig;
use crate::train::TrainConfig;

/// Environment variable that overrides every seed in a run configuration.
pub const SEED_ENV: &str = "VECSPOT_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Prior mode, sampling density, query selection ratios and network sizes.
    pub model: ModelConfig,
    /// Loss weights, optimizer and training seed.
    pub train: TrainConfig,
    pub synth: SynthConfig,
    /// Seed for inference-time query selection.
    pub inference_seed: u64,
    pub bfr: bool,
    pub weight_mode: WeightMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            inference_seed: 0,
            bfr: true,
            weight_mode: WeightMode::default(),
        }
    }
}

impl RunConfig {
    /// Desk-scale preset used by `train-toy`: a narrower encoder, the full
    /// six-layer decoder and coarser sampling.
    pub fn toy() -> Self {
        Self {
            model: ModelConfig {
                encoder: EncoderConfig {
                    embed_dim: 32,
                    depth: 2,
                    heads: 4,
                    window: 64,
                    seed: 0,
                },
                decoder: DecoderConfig {
                    layers: 6,
                    heads: 4,
                    ..DecoderConfig::default()
                },
                sampling: SamplingConfig::with_alpha(0.05),
                ..ModelConfig::default()
            },
            train: TrainConfig {
                epochs: 200,
                optimizer: OptimizerConfig::AdamW {
                    lr: 3e-3,
                    weight_decay: 0.0,
                },
                ..TrainConfig::default()
            },
            synth: SynthConfig {
                count: 50,
                seed: 7,
                ..SynthConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()
    }

    /// Sets every seed to `seed`.
    pub fn set_seed(&mut self, seed: u64) {
        self.model.encoder.seed = seed;
        self.model.decoder.seed = seed;
        self.train.seed = seed;
        self.synth.seed = seed;
        self.inference_seed = seed;
    }

    /// Applies the seed override from the environment, if present.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
            self.set_seed(seed);
        }
        Ok(())
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let cfg: Self = crate::io::decode_json(bytes, crate::io::Strictness::Strict)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(c.model.sampling.alpha_sample, 0.01);
        assert_eq!(c.model.decoder.alpha_select_train, 0.5);
        assert_eq!(c.model.decoder.alpha_select_infer, 1.0);
        assert_eq!(c.model.decoder.layers, 6);
        let w = c.train.loss_weights;
        assert_eq!([w.cls, w.bce, w.dice, w.sem], [2.5, 5.0, 5.0, 5.0]);
        c.validate().unwrap();
        RunConfig::toy().validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = RunConfig::parse(br#"{"model": {"prior_mode": "without_prior", "sampling": {"alpha_sample": 0.02}}}"#).unwrap();
        assert_eq!(c.model.sampling.alpha_sample, 0.02);
        assert_eq!(c.model.sampling.k_max, 4096);
        assert_eq!(c.model.prior_mode, crate::features::PriorMode::WithoutPrior);
        assert!(RunConfig::parse(br#"{"modle": {}}"#).is_err());
        assert!(RunConfig::parse(br#"{"model": {"decoder": {"alpha_select_train": 0}}}"#).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let c = RunConfig::toy();
        let bytes = crate::io::to_json_bytes(&c).unwrap();
        assert_eq!(RunConfig::parse(&bytes).unwrap(), c);
    }

    #[test]
    fn seed_override_reaches_every_component() {
        let mut c = RunConfig::default();
        c.set_seed(42);
        assert_eq!(
            [c.model.encoder.seed, c.model.decoder.seed, c.train.seed, c.synth.seed, c.inference_seed],
            [42; 5]
        );
    }
}
