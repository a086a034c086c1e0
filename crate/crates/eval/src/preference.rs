use image::RgbImage;

use crate::clip::{clip_score, ToyClip};
use crate::error::{EvalError, Result};
use crate::features::Planes;

/// Human-preference score of an image for a prompt.
pub trait PreferenceModel: Send + Sync {
    fn id(&self) -> &str;
    fn score(&self, image: &RgbImage, prompt: &str) -> Result<f64>;
}

/// Weight-free stand-in: penalises high-frequency energy, with a small
/// prompt-alignment term from [`ToyClip`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyPreference;

impl PreferenceModel for ToyPreference {
    fn id(&self) -> &str {
        "toy:preference"
    }

    fn score(&self, image: &RgbImage, prompt: &str) -> Result<f64> {
        if prompt.trim().is_empty() {
            return Err(EvalError::param("preference score needs a non-empty prompt"));
        }
        let planes = Planes::opponent(image);
        let energy: f64 = (0..3).map(|c| planes.laplacian_energy(c)).sum();
        let align = clip_score(&ToyClip, image, prompt)?;
        Ok(0.3 - 0.05 * energy + 0.0002 * align)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::corrupt;
    use image::Rgb;

    #[test]
    fn deterministic_and_finite() {
        let img = RgbImage::from_fn(32, 32, |x, y| Rgb([x as u8 * 8, y as u8 * 8, 40]));
        let a = ToyPreference.score(&img, "a bicycle").unwrap();
        assert_eq!(a, ToyPreference.score(&img, "a bicycle").unwrap());
        assert!(a.is_finite());
        assert!(ToyPreference.score(&img, "").is_err());
    }

    #[test]
    fn clean_beats_noisy() {
        let img = RgbImage::from_fn(48, 48, |x, y| Rgb([(x * 5) as u8, (y * 5) as u8, 128]));
        let clean = ToyPreference.score(&img, "a car").unwrap();
        let noisy = ToyPreference.score(&corrupt(&img, 0.6, 3), "a car").unwrap();
        assert!(clean > noisy);
    }
}
