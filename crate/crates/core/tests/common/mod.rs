#![allow(dead_code)]

use sctlab_core::encoders::{build_encoders, EncoderDims, Encoders};
use sctlab_core::numerics::SeededRng;
use sctlab_core::tuning::{LabeledFeatures, PromptContext};

pub const SMALL: EncoderDims = EncoderDims {
    latent_dim: 4,
    embed_dim: 5,
    feature_dim: 6,
    grid_h: 2,
    grid_w: 2,
    n_classes: 4,
};

pub fn random_patches(rng: &mut SeededRng, dims: &EncoderDims) -> Vec<Vec<f64>> {
    (0..dims.n_regions())
        .map(|_| rng.gaussian_vec(dims.latent_dim, 1.0))
        .collect()
}

/// Encoders, a labelled batch and a prompt, all drawn from `seed`.
pub struct Fixture {
    pub enc: Encoders<f64>,
    pub batch: Vec<LabeledFeatures<f64>>,
    pub omega: PromptContext<f64>,
}

pub fn fixture(dims: EncoderDims, seed: u64, batch: usize, n_tokens: usize) -> Fixture {
    let enc = build_encoders::<f64>(dims, seed).unwrap();
    let mut rng = SeededRng::stream(seed, 77);
    let batch = (0..batch)
        .map(|_| LabeledFeatures {
            features: enc.encode_image(&random_patches(&mut rng, &dims)).unwrap(),
            label: rng.below(dims.n_classes),
        })
        .collect();
    let omega = PromptContext::random(n_tokens, dims.embed_dim, 0.5, &mut rng).unwrap();
    Fixture { enc, batch, omega }
}

impl Fixture {
    pub fn refs(&self) -> Vec<&LabeledFeatures<f64>> {
        self.batch.iter().collect()
    }
}
