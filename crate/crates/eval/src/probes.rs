//! Corruption probes: metrics should rank a clean image above noisy copies
//! of it.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::features::corrupt;
use crate::perceptual::PerceptualMetric;
use crate::preference::PreferenceModel;

/// Smooth synthetic scenes: a sky/ground gradient with a few soft discs.
pub fn probe_images(n: usize, seed: u64, size: (u32, u32)) -> Vec<RgbImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let top: [f64; 3] = [rng.random_range(80.0..220.0), rng.random_range(80.0..220.0), rng.random_range(150.0..255.0)];
            let bottom: [f64; 3] = [rng.random_range(20.0..160.0), rng.random_range(20.0..160.0), rng.random_range(20.0..120.0)];
            let discs: Vec<(f64, f64, f64, [f64; 3])> = (0..3)
                .map(|_| {
                    (
                        rng.random_range(0.2..0.8) * size.0 as f64,
                        rng.random_range(0.2..0.8) * size.1 as f64,
                        rng.random_range(0.08..0.25) * size.0.min(size.1) as f64,
                        [rng.random_range(0.0..255.0), rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)],
                    )
                })
                .collect();
            RgbImage::from_fn(size.0, size.1, |x, y| {
                let t = y as f64 / size.1.max(1) as f64;
                let mut px = [0.0; 3];
                for c in 0..3 {
                    px[c] = top[c] * (1.0 - t) + bottom[c] * t;
                }
                for &(cx, cy, r, col) in &discs {
                    let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                    let a = (1.0 - (d - r) / 3.0).clamp(0.0, 1.0);
                    for c in 0..3 {
                        px[c] = px[c] * (1.0 - a) + col[c] * a;
                    }
                }
                Rgb(px.map(|v| v.round().clamp(0.0, 255.0) as u8))
            })
        })
        .collect()
}

/// Counts images whose 50%-corrupted copy is farther than the 10% one.
pub fn perceptual_probe(metric: &dyn PerceptualMetric, images: &[RgbImage], seed: u64) -> Result<usize> {
    let mut passed = 0;
    for (i, img) in images.iter().enumerate() {
        let s = seed.wrapping_add(i as u64);
        let light = metric.distance(img, &corrupt(img, 0.1, s))?;
        let heavy = metric.distance(img, &corrupt(img, 0.5, s))?;
        passed += (heavy > light) as usize;
    }
    Ok(passed)
}

/// Counts images that score above their heavily corrupted copy.
pub fn preference_probe(model: &dyn PreferenceModel, images: &[RgbImage], prompt: &str, seed: u64) -> Result<usize> {
    let mut passed = 0;
    for (i, img) in images.iter().enumerate() {
        let clean = model.score(img, prompt)?;
        let noisy = model.score(&corrupt(img, 0.5, seed.wrapping_add(i as u64)), prompt)?;
        passed += (clean > noisy) as usize;
    }
    Ok(passed)
}
