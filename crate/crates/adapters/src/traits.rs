use image::RgbImage;
use insertkit_core::{make_mask, BinaryMask, LatentTensor, PromptEmbedding};

use crate::error::{AdapterError, Result};

/// Latent encoder/decoder pair.
pub trait LatentCodec: Send + Sync {
    fn id(&self) -> &str;

    /// Pixels per latent cell along each axis.
    fn spatial_factor(&self) -> usize;

    fn latent_channels(&self) -> usize;

    fn encode(&self, image: &RgbImage) -> Result<LatentTensor>;

    fn decode(&self, latent: &LatentTensor) -> Result<RgbImage>;

    fn check_dims(&self, image: &RgbImage) -> Result<()> {
        let f = self.spatial_factor() as u32;
        if image.width() == 0 || image.height() == 0 || image.width() % f != 0 || image.height() % f != 0 {
            return Err(AdapterError::param(format!(
                "image {}x{} is not a non-empty multiple of the spatial factor {f}",
                image.width(),
                image.height()
            )));
        }
        Ok(())
    }
}

/// A prompt embedding plus whether the text had to be cut to fit.
#[derive(Debug, Clone)]
pub struct EncodedPrompt {
    pub embedding: PromptEmbedding,
    pub truncated: bool,
}

pub trait TextEncoder: Send + Sync {
    fn id(&self) -> &str;

    /// Maximum number of tokens the encoder sees.
    fn token_limit(&self) -> usize;

    /// Deterministic for a fixed model revision. Empty text is an error;
    /// text past the token limit is truncated and flagged.
    fn embed(&self, text: &str) -> Result<EncodedPrompt>;
}

pub trait Upscaler: Send + Sync {
    fn id(&self) -> &str;

    fn supported_factors(&self) -> &[u32];

    fn upscale(&self, image: &RgbImage, factor: u32) -> Result<RgbImage>;

    fn check_factor(&self, factor: u32) -> Result<()> {
        if !self.supported_factors().contains(&factor) {
            return Err(AdapterError::param(format!(
                "upscaler `{}` supports factors {:?}, not {factor}",
                self.id(),
                self.supported_factors()
            )));
        }
        Ok(())
    }
}

/// Segmenter output. `warning` is set when the mask is a fallback.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub mask: BinaryMask,
    pub warning: Option<String>,
}

pub trait Segmenter: Send + Sync {
    fn id(&self) -> &str;

    /// Pixel-resolution mask of the object of `category`, or `None` when
    /// nothing was detected.
    fn segment(&self, image: &RgbImage, category: &str) -> Result<Option<BinaryMask>>;
}

/// Runs the segmenter and falls back to a threshold mask when it detects
/// nothing. A fallback is reported through the warning, never as an error.
pub fn segment_with_fallback(
    segmenter: &dyn Segmenter,
    image: &RgbImage,
    category: &str,
    threshold: f32,
) -> Result<Segmentation> {
    if category.trim().is_empty() {
        return Err(AdapterError::param("segmentation category must be non-empty"));
    }
    match segmenter.segment(image, category)? {
        Some(mask) if !mask.is_empty() => Ok(Segmentation { mask, warning: None }),
        _ => {
            let fallback = make_mask(image, threshold)?;
            let warning = if fallback.empty {
                format!("segmenter found no `{category}`; threshold fallback mask is empty")
            } else {
                format!("segmenter found no `{category}`; using threshold mask")
            };
            Ok(Segmentation {
                mask: fallback.mask,
                warning: Some(warning),
            })
        }
    }
}

pub trait BackgroundGenerator: Send + Sync {
    fn id(&self) -> &str;

    /// Same `(prompt, seed, size)` gives the same image.
    fn generate(&self, prompt: &str, seed: u64, size: (u32, u32)) -> Result<RgbImage>;
}
