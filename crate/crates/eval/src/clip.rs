use image::RgbImage;
use insertkit_adapters::toy::text_seed;

use crate::error::{EvalError, Result};
use crate::features::{cosine_score, Planes};

/// Joint image/text embedding model.
pub trait ClipModel: Send + Sync {
    fn id(&self) -> &str;
    fn embed_image(&self, image: &RgbImage) -> Result<Vec<f64>>;
    fn embed_text(&self, text: &str) -> Result<Vec<f64>>;
}

/// `100 * cos(image embedding, text embedding)`.
pub fn clip_score(model: &dyn ClipModel, image: &RgbImage, text: &str) -> Result<f64> {
    if text.trim().is_empty() {
        return Err(EvalError::param("CLIP score needs a non-empty text"));
    }
    Ok(cosine_score(&model.embed_image(image)?, &model.embed_text(text)?))
}

pub const TOY_CLIP_DIM: usize = 64;
const GRID: usize = 4;

/// Weight-free stand-in. Images embed as per-cell colour means and
/// Laplacian energy on a 4x4 grid, texts as signed hashed word counts.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyClip;

impl ClipModel for ToyClip {
    fn id(&self) -> &str {
        "toy:clip"
    }

    fn embed_image(&self, image: &RgbImage) -> Result<Vec<f64>> {
        if image.width() < GRID as u32 || image.height() < GRID as u32 {
            return Err(EvalError::param("image too small to embed"));
        }
        let planes = Planes::opponent(image);
        let mut out = vec![0.0; TOY_CLIP_DIM];
        let (cw, ch) = (planes.width / GRID, planes.height / GRID);
        for gy in 0..GRID {
            for gx in 0..GRID {
                let cell = gy * GRID + gx;
                let (mut sums, mut energy) = ([0.0; 3], 0.0);
                for y in gy * ch..(gy + 1) * ch {
                    for x in gx * cw..(gx + 1) * cw {
                        for (c, s) in sums.iter_mut().enumerate() {
                            *s += planes.at(c, x, y);
                        }
                        let (xi, yi) = (x as isize, y as isize);
                        energy += (4.0 * planes.clamped(0, xi, yi)
                            - planes.clamped(0, xi - 1, yi)
                            - planes.clamped(0, xi + 1, yi)
                            - planes.clamped(0, xi, yi - 1)
                            - planes.clamped(0, xi, yi + 1))
                        .abs();
                    }
                }
                let n = (cw * ch) as f64;
                for c in 0..3 {
                    out[cell * 3 + c] = sums[c] / n;
                }
                out[48 + cell] = energy / n;
            }
        }
        Ok(out)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let mut out = vec![0.0; TOY_CLIP_DIM];
        let mut words = 0;
        for word in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
        {
            let h = text_seed(&word);
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            out[(h % TOY_CLIP_DIM as u64) as usize] += sign;
            words += 1;
        }
        if words == 0 {
            return Err(EvalError::param("text has no words to embed"));
        }
        Ok(out)
    }
}
