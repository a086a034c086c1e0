#![allow(dead_code)]

use insertkit_core::{
    BinaryMask, Denoiser, LatentRole, LatentTensor, MaskResolution, NoiseSource, PromptEmbedding,
    RandomSource, Result,
};

/// ε_θ ≡ c, optionally scaled by the latent (`ε = c + a·z`).
pub struct AffineDenoiser {
    pub constant: f32,
    pub gain: f32,
    pub out_channels: Option<usize>,
}

impl AffineDenoiser {
    pub fn zero() -> Self {
        Self { constant: 0.0, gain: 0.0, out_channels: None }
    }

    pub fn constant(c: f32) -> Self {
        Self { constant: c, gain: 0.0, out_channels: None }
    }

    pub fn linear(a: f32) -> Self {
        Self { constant: 0.0, gain: a, out_channels: None }
    }
}

impl Denoiser for AffineDenoiser {
    fn id(&self) -> &str {
        "test-affine"
    }

    fn predict(&self, latent: &LatentTensor, _t: usize, _p: &PromptEmbedding, _g: f32) -> Result<LatentTensor> {
        if let Some(c) = self.out_channels {
            return Ok(LatentTensor::zeros(c, latent.height(), latent.width()));
        }
        Ok(latent.map(|z| self.constant + self.gain * z))
    }
}

pub fn prompt() -> PromptEmbedding {
    PromptEmbedding::new("a red bicycle", "test", vec![2], vec![0.5, -0.5], None)
}

pub fn random_latent(seed: u64, c: usize, h: usize, w: usize, role: LatentRole) -> LatentTensor {
    let data = RandomSource::new(seed).draw_gaussian(c * h * w);
    LatentTensor::from_vec(c, h, w, data, role).unwrap()
}

pub fn half_mask(h: usize, w: usize) -> BinaryMask {
    let data = (0..h * w).map(|i| u8::from(i % 2 == 0)).collect();
    BinaryMask::new(h, w, data, MaskResolution::Latent).unwrap()
}

/// ᾱ_t as a fresh product, accumulated from t down to 0.
pub fn brute_alpha_bar(betas: &[f64], t: usize) -> f64 {
    (0..=t).rev().map(|s| 1.0 - betas[s]).product()
}

/// Independent recomputation of the forward process in f64.
pub fn oracle_noise(x0: &LatentTensor, alpha_bar: f64, eps: &[f32]) -> Vec<f64> {
    x0.as_slice()
        .iter()
        .zip(eps)
        .map(|(&x, &e)| alpha_bar.sqrt() * x as f64 + (1.0 - alpha_bar).sqrt() * e as f64)
        .collect()
}
