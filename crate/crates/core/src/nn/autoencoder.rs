use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp, MlpSpec};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderSpec {
    pub feature_dim: usize,
    pub encoder_depth: usize,
    pub encoder_width: usize,
    pub decoder_depth: usize,
    pub decoder_width: usize,
}

impl AutoencoderSpec {
    /// 16-d code, 8-layer decoder of width 256.
    pub fn paper() -> Self {
        Self {
            feature_dim: 16,
            encoder_depth: 2,
            encoder_width: 64,
            decoder_depth: 8,
            decoder_width: 256,
        }
    }

    pub fn desk() -> Self {
        Self {
            feature_dim: 16,
            encoder_depth: 2,
            encoder_width: 32,
            decoder_depth: 4,
            decoder_width: 48,
        }
    }

    pub fn encoder_spec(&self) -> MlpSpec {
        MlpSpec::new(3, self.feature_dim, self.encoder_depth, self.encoder_width)
    }

    pub fn decoder_spec(&self) -> MlpSpec {
        MlpSpec::new(self.feature_dim, 3, self.decoder_depth, self.decoder_width).with_output(Activation::Sigmoid)
    }
}

/// RGB -> feature -> RGB; the decoder output is squashed into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorAutoencoder {
    pub spec: AutoencoderSpec,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

impl ColorAutoencoder {
    pub fn new<R: Rng>(spec: AutoencoderSpec, rng: &mut R) -> Result<Self> {
        let encoder = Mlp::new(spec.encoder_spec(), rng)?;
        let decoder = Mlp::new(spec.decoder_spec(), rng)?;
        Ok(Self { spec, encoder, decoder })
    }

    pub fn encode(&self, colors: &Tensor) -> Result<Tensor> {
        self.encoder.forward(colors)
    }

    pub fn decode(&self, features: &Tensor) -> Result<Tensor> {
        self.decoder.forward(features)
    }

    pub fn forward(&self, colors: &Tensor) -> Result<Tensor> {
        self.decode(&self.encode(colors)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_in_unit_cube_and_composes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ae = ColorAutoencoder::new(AutoencoderSpec::desk(), &mut rng).unwrap();
        let colors = Tensor::new(vec![50, 3], (0..150).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let out = ae.forward(&colors).unwrap();
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let two_step = ae.decode(&ae.encode(&colors).unwrap()).unwrap();
        assert_eq!(out, two_step);
    }
}
