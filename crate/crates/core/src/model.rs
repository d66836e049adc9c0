//! The full descriptor model: backbone, encoder and aggregation head.

use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate, AggregationVariant, AttentionBundle, HeadParams, ImageDescriptor, KeyPatches, DEFAULT_TAU};
use crate::backbone::{raw_tokens, BackboneWeights};
use crate::encoder::{tap_levels, EncoderWeights, MultiLevelTokens, DEFAULT_TAPS};
use crate::error::{Error, Result};
use crate::numeric::{Rng, Scalar, Tensor};

/// Architecture constants and inference defaults, stored alongside the
/// tensors in a weights container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub taps: [usize; 3],
    pub tau: f64,
    pub variant: AggregationVariant,
    pub input_mean: [f64; 3],
    pub input_std: [f64; 3],
    pub ln_eps: f64,
    pub bn_eps: f64,
    pub class_token: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 256,
            layers: 6,
            heads: 8,
            mlp_ratio: 4,
            taps: DEFAULT_TAPS,
            tau: DEFAULT_TAU,
            variant: AggregationVariant::Standard,
            input_mean: [0.485, 0.456, 0.406],
            input_std: [0.229, 0.224, 0.225],
            ln_eps: 1e-6,
            bn_eps: 1e-5,
            class_token: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim % 4 != 0 {
            return Err(Error::config(format!("dim {} must be a positive multiple of 4", self.dim)));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::config(format!("dim {} not divisible into {} heads", self.dim, self.heads)));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::config("mlp ratio must be positive"));
        }
        if self.taps.iter().any(|&t| t == 0 || t > self.layers) {
            return Err(Error::config(format!("taps {:?} must lie in 1..={}", self.taps, self.layers)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config(format!("tau {} outside [0, 1]", self.tau)));
        }
        if self.input_std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::config("input std must be positive"));
        }
        Ok(())
    }
}

/// Which patches become key patches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KeySelection {
    /// Fused mask strictly above the threshold.
    Threshold(f64),
    /// Every patch, regardless of attention.
    All,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<T = f32> {
    pub config: ModelConfig,
    pub backbone: BackboneWeights<T>,
    pub encoder: EncoderWeights<T>,
    pub head: HeadParams<T>,
}

impl<T: Scalar> ModelWeights<T> {
    /// Random weights with independent streams per component.
    pub fn random(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut backbone = BackboneWeights::random(config.dim, &mut Rng::stream(seed, 0));
        backbone.input_mean = config.input_mean.map(T::lit);
        backbone.input_std = config.input_std.map(T::lit);
        backbone.bn_eps = T::lit(config.bn_eps);
        let mut encoder = EncoderWeights::random(
            config.layers,
            config.dim,
            config.heads,
            config.mlp_ratio,
            &mut Rng::stream(seed, 1),
        );
        encoder.ln_eps = T::lit(config.ln_eps);
        if config.class_token {
            let mut rng = Rng::stream(seed, 3);
            encoder.class_token = Some((0..config.dim).map(|_| T::lit(0.02 * rng.normal())).collect());
        }
        let head = HeadParams::random(config.variant, config.dim, &mut Rng::stream(seed, 2));
        Ok(ModelWeights { config, backbone, encoder, head })
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        self.backbone.validate(c.dim)?;
        self.encoder.validate(c.layers, c.dim)?;
        if self.encoder.heads != c.heads {
            return Err(Error::config("encoder head count disagrees with config"));
        }
        if self.head.variant != c.variant {
            return Err(Error::config(format!(
                "head is for variant {}, config says {}",
                self.head.variant, c.variant
            )));
        }
        self.head.validate(c.dim)
    }

    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        ModelWeights {
            config: self.config.clone(),
            backbone: self.backbone.cast(),
            encoder: self.encoder.cast(),
            head: self.head.cast(),
        }
    }

    /// Multi-level tokens of an `H×W×3` image with values in `[0, 1]`.
    pub fn tokens(&self, image: &Tensor<T>) -> Result<MultiLevelTokens<T>> {
        let raw = raw_tokens(image, &self.backbone)?;
        let outputs = self.encoder.encode(&raw.tokens)?;
        tap_levels(&outputs, self.config.taps, raw.rows, raw.cols, raw.centers)
    }

    /// Descriptor from precomputed tokens.
    pub fn describe_tokens(
        &self,
        id: &str,
        tokens: &MultiLevelTokens<T>,
        keys: KeySelection,
    ) -> Result<(ImageDescriptor, AttentionBundle<T>)> {
        let tau = match keys {
            KeySelection::Threshold(t) => t,
            KeySelection::All => 0.0,
        };
        let (mut desc, bundle) = aggregate(id, self.config.variant, tokens, &self.head, tau)?;
        if keys == KeySelection::All {
            desc.keys = KeyPatches {
                coords: tokens.centers.clone(),
                descs: tokens.mid.data().iter().map(|v| v.as_f64() as f32).collect(),
                dim: tokens.dim(),
            };
        }
        Ok((desc, bundle))
    }

    pub fn describe(
        &self,
        id: &str,
        image: &Tensor<T>,
        keys: KeySelection,
    ) -> Result<(ImageDescriptor, AttentionBundle<T>)> {
        let tokens = self.tokens(image)?;
        self.describe_tokens(id, &tokens, keys)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig { dim: 16, layers: 3, heads: 2, taps: [1, 2, 3], ..Default::default() }
    }

    #[test]
    fn random_model_validates_and_describes() {
        let m = ModelWeights::<f32>::random(small(), 1).unwrap();
        m.validate().unwrap();
        let img = Tensor::from_fn(&[32, 48, 3], |i| (i % 7) as f32 / 7.0);
        let (d, bundle) = m.describe("x", &img, KeySelection::All).unwrap();
        assert_eq!((d.rows, d.cols), (2, 3));
        assert_eq!(d.keys.len(), 6);
        assert_eq!(bundle.fused.len(), 6);
        let (none, _) = m.describe("x", &img, KeySelection::Threshold(1.0)).unwrap();
        assert_eq!(none.keys.len(), 0);
        assert_eq!(none.global, d.global);
    }

    #[test]
    fn config_checks() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig { taps: [0, 2, 4], ..Default::default() }.validate().is_err());
        assert!(ModelConfig { heads: 7, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn seed_determines_weights() {
        let a = ModelWeights::<f32>::random(small(), 5).unwrap();
        let b = ModelWeights::<f32>::random(small(), 5).unwrap();
        let c = ModelWeights::<f32>::random(small(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
