//! Weight-free adapters. All arithmetic is seeded or integer so outputs are
//! bit-identical across runs and platforms.

use image::{Rgb, RgbImage};
use insertkit_core::{
    make_mask, BinaryMask, Denoiser, LatentRole, LatentTensor, NoiseSchedule, NoiseSource, PromptEmbedding,
    RandomSource, DEFAULT_MASK_THRESHOLD,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{AdapterError, Result};
use crate::pixels::quantize;
use crate::traits::{BackgroundGenerator, EncodedPrompt, LatentCodec, Segmenter, TextEncoder, Upscaler};

pub const TOY_FACTOR: usize = 8;
pub const TOY_CHANNELS: usize = 4;
pub const TOY_EMBED_DIM: usize = 16;
pub const TOY_TOKEN_LIMIT: usize = 77;

/// Seed derived from the SHA-256 of `text` (first 8 bytes, little endian).
pub fn text_seed(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// 8×8 average-pool encoder, replicate decoder.
///
/// Channels 0..3 hold the block mean of R, G, B mapped to `[-1, 1]`,
/// channel 3 their average. Exactly invertible on block-constant images.
#[derive(Debug, Clone, Default)]
pub struct ToyCodec;

impl LatentCodec for ToyCodec {
    fn id(&self) -> &str {
        "toy:codec"
    }

    fn spatial_factor(&self) -> usize {
        TOY_FACTOR
    }

    fn latent_channels(&self) -> usize {
        TOY_CHANNELS
    }

    fn encode(&self, image: &RgbImage) -> Result<LatentTensor> {
        self.check_dims(image)?;
        let f = TOY_FACTOR;
        let (lw, lh) = (image.width() as usize / f, image.height() as usize / f);
        let plane = lw * lh;
        let mut data = vec![0.0f32; TOY_CHANNELS * plane];
        for by in 0..lh {
            for bx in 0..lw {
                let mut sums = [0u32; 3];
                for y in by * f..(by + 1) * f {
                    for x in bx * f..(bx + 1) * f {
                        let p = image.get_pixel(x as u32, y as u32);
                        for c in 0..3 {
                            sums[c] += p.0[c] as u32;
                        }
                    }
                }
                let cell = by * lw + bx;
                let mut avg = 0.0f64;
                for c in 0..3 {
                    let mean = sums[c] as f64 / (f * f) as f64;
                    let signed = mean / 127.5 - 1.0;
                    data[c * plane + cell] = signed as f32;
                    avg += signed;
                }
                data[3 * plane + cell] = (avg / 3.0) as f32;
            }
        }
        Ok(LatentTensor::from_vec(TOY_CHANNELS, lh, lw, data, LatentRole::Object)?)
    }

    fn decode(&self, latent: &LatentTensor) -> Result<RgbImage> {
        if latent.channels() != TOY_CHANNELS {
            return Err(AdapterError::param(format!(
                "toy codec expects {TOY_CHANNELS} channels, got {}",
                latent.channels()
            )));
        }
        let f = TOY_FACTOR as u32;
        Ok(RgbImage::from_fn(latent.width() as u32 * f, latent.height() as u32 * f, |x, y| {
            let (lx, ly) = ((x / f) as usize, (y / f) as usize);
            let px = |c| quantize((latent.get(c, ly, lx) + 1.0) * 127.5);
            Rgb([px(0), px(1), px(2)])
        }))
    }
}

/// How the toy denoiser maps a latent to a noise prediction.
#[derive(Debug, Clone, PartialEq)]
pub enum ToyMode {
    Zero,
    Constant(f32),
    /// Per-cell channel mixing `ε = A·z` with a row-major `C×C` matrix.
    Linear(Vec<f32>),
}

/// Deterministic ε_θ stand-in.
///
/// With a non-zero `prompt_gain` the conditional prediction is shifted by the
/// prompt embedding, so classifier-free guidance scales that shift.
#[derive(Debug, Clone)]
pub struct ToyDenoiser {
    mode: ToyMode,
    prompt_gain: f32,
    id: String,
}

impl ToyDenoiser {
    pub fn new(mode: ToyMode) -> Self {
        let id = match &mode {
            ToyMode::Zero => "toy:denoiser/zero".to_string(),
            ToyMode::Constant(c) => format!("toy:denoiser/constant({c})"),
            ToyMode::Linear(_) => "toy:denoiser/linear".to_string(),
        };
        Self {
            mode,
            prompt_gain: 0.0,
            id,
        }
    }

    pub fn zero() -> Self {
        Self::new(ToyMode::Zero)
    }

    pub fn constant(c: f32) -> Self {
        Self::new(ToyMode::Constant(c))
    }

    /// `ε = a·z` on every channel.
    pub fn scaled_identity(channels: usize, a: f32) -> Self {
        let mut m = vec![0.0; channels * channels];
        for c in 0..channels {
            m[c * channels + c] = a;
        }
        Self::new(ToyMode::Linear(m))
    }

    pub fn with_prompt_gain(mut self, gain: f32) -> Self {
        self.prompt_gain = gain;
        self
    }

    pub fn mode(&self) -> &ToyMode {
        &self.mode
    }
}

impl Denoiser for ToyDenoiser {
    fn id(&self) -> &str {
        &self.id
    }

    fn predict(
        &self,
        latent: &LatentTensor,
        _t: usize,
        prompt: &PromptEmbedding,
        guidance_scale: f32,
    ) -> insertkit_core::Result<LatentTensor> {
        let (c, h, w) = latent.shape();
        let plane = h * w;
        let mut out = match &self.mode {
            ToyMode::Zero => vec![0.0; c * plane],
            ToyMode::Constant(v) => vec![*v; c * plane],
            ToyMode::Linear(m) => {
                if m.len() != c * c {
                    return Err(insertkit_core::CoreError::adapter(
                        &self.id,
                        format!("{}-entry matrix cannot mix {c} channels", m.len()),
                    ));
                }
                let z = latent.as_slice();
                let mut out = vec![0.0f32; c * plane];
                for row in 0..c {
                    for col in 0..c {
                        let a = m[row * c + col];
                        if a == 0.0 {
                            continue;
                        }
                        for i in 0..plane {
                            out[row * plane + i] += a * z[col * plane + i];
                        }
                    }
                }
                out
            }
        };
        if self.prompt_gain != 0.0 && !prompt.conditional().is_empty() {
            let cond = prompt.conditional();
            for ch in 0..c {
                let shift = guidance_scale * self.prompt_gain * cond[ch % cond.len()];
                for v in &mut out[ch * plane..(ch + 1) * plane] {
                    *v += shift;
                }
            }
        }
        LatentTensor::from_vec(c, h, w, out, LatentRole::Working)
    }
}

/// Optimal ε predictor for latents drawn from `N(mean, σ²)` per element:
/// `ε̂ = √(1−ᾱ)·(z − √ᾱ·mean) / (ᾱσ² + 1 − ᾱ)`.
///
/// Used as the default toy denoiser because it actually pulls noisy latents
/// back toward plausible values, so toy runs give recognisable images. The
/// prompt shifts `mean` by `prompt_gain · guidance · cond`.
#[derive(Debug, Clone)]
pub struct PriorDenoiser {
    schedule: NoiseSchedule,
    sigma: f32,
    prompt_gain: f32,
}

impl PriorDenoiser {
    pub fn new(schedule: NoiseSchedule, sigma: f32) -> Self {
        Self {
            schedule,
            sigma,
            prompt_gain: 0.0,
        }
    }

    pub fn with_prompt_gain(mut self, gain: f32) -> Self {
        self.prompt_gain = gain;
        self
    }
}

impl Denoiser for PriorDenoiser {
    fn id(&self) -> &str {
        "toy:denoiser/gaussian-prior"
    }

    fn predict(
        &self,
        latent: &LatentTensor,
        t: usize,
        prompt: &PromptEmbedding,
        guidance_scale: f32,
    ) -> insertkit_core::Result<LatentTensor> {
        self.schedule.check_timestep(t)?;
        let ab = self.schedule.alpha_bar(t);
        let denom = ab * (self.sigma as f64).powi(2) + 1.0 - ab;
        let gain = (1.0 - ab).sqrt() / denom;
        let (c, h, w) = latent.shape();
        let plane = h * w;
        let cond = prompt.conditional();
        let data = latent
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, &z)| {
                let mean = if self.prompt_gain != 0.0 && !cond.is_empty() {
                    (guidance_scale * self.prompt_gain * cond[(i / plane) % cond.len()]) as f64
                } else {
                    0.0
                };
                (gain * (z as f64 - ab.sqrt() * mean)) as f32
            })
            .collect();
        LatentTensor::from_vec(c, h, w, data, LatentRole::Working)
    }
}

/// Whitespace tokenizer with a hash-seeded Gaussian vector per text.
#[derive(Debug, Clone, Default)]
pub struct ToyTextEncoder;

impl ToyTextEncoder {
    fn vector(text: &str) -> Vec<f32> {
        let mut rng = RandomSource::new(text_seed(text));
        let v = rng.draw_gaussian(TOY_EMBED_DIM);
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(f32::MIN_POSITIVE);
        v.into_iter().map(|x| x / norm).collect()
    }
}

impl TextEncoder for ToyTextEncoder {
    fn id(&self) -> &str {
        "toy:text-encoder"
    }

    fn token_limit(&self) -> usize {
        TOY_TOKEN_LIMIT
    }

    fn embed(&self, text: &str) -> Result<EncodedPrompt> {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.is_empty() {
            return Err(AdapterError::param("prompt text must be non-empty"));
        }
        let truncated = tokens.len() > TOY_TOKEN_LIMIT;
        if truncated {
            tracing::warn!(
                tokens = tokens.len(),
                limit = TOY_TOKEN_LIMIT,
                "prompt truncated to the encoder token limit"
            );
        }
        let kept = tokens[..tokens.len().min(TOY_TOKEN_LIMIT)].join(" ");
        let embedding = PromptEmbedding::new(
            text,
            self.id(),
            vec![TOY_EMBED_DIM],
            Self::vector(&kept),
            Some(Self::vector("")),
        );
        Ok(EncodedPrompt { embedding, truncated })
    }
}

/// Pixel replication.
#[derive(Debug, Clone, Default)]
pub struct ToyUpscaler;

impl Upscaler for ToyUpscaler {
    fn id(&self) -> &str {
        "toy:upscaler"
    }

    fn supported_factors(&self) -> &[u32] {
        &[1, 2, 4, 8]
    }

    fn upscale(&self, image: &RgbImage, factor: u32) -> Result<RgbImage> {
        self.check_factor(factor)?;
        Ok(RgbImage::from_fn(image.width() * factor, image.height() * factor, |x, y| {
            *image.get_pixel(x / factor, y / factor)
        }))
    }
}

/// Returns the threshold mask, or nothing when it is empty.
#[derive(Debug, Clone)]
pub struct ToySegmenter {
    pub threshold: f32,
}

impl Default for ToySegmenter {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_MASK_THRESHOLD,
        }
    }
}

impl Segmenter for ToySegmenter {
    fn id(&self) -> &str {
        "toy:segmenter"
    }

    fn segment(&self, image: &RgbImage, _category: &str) -> Result<Option<BinaryMask>> {
        let out = make_mask(image, self.threshold)?;
        Ok((!out.empty).then_some(out.mask))
    }
}

/// Vertical two-colour gradient; colours drawn from the seed and prompt.
#[derive(Debug, Clone, Default)]
pub struct ToyBackgroundGenerator;

impl BackgroundGenerator for ToyBackgroundGenerator {
    fn id(&self) -> &str {
        "toy:bg-generator"
    }

    fn generate(&self, prompt: &str, seed: u64, (w, h): (u32, u32)) -> Result<RgbImage> {
        if w == 0 || h == 0 {
            return Err(AdapterError::param("background size must be non-zero"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ text_seed(prompt));
        let top: [u32; 3] = std::array::from_fn(|_| rng.random_range(40..=220));
        let bottom: [u32; 3] = std::array::from_fn(|_| rng.random_range(40..=220));
        let span = (h - 1).max(1);
        Ok(RgbImage::from_fn(w, h, |_, y| {
            let px = |c: usize| ((top[c] * (span - y.min(span)) + bottom[c] * y.min(span)) / span) as u8;
            Rgb([px(0), px(1), px(2)])
        }))
    }
}
