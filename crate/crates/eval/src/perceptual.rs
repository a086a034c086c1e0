//! Weight-free perceptual distance in the style of LPIPS: multi-scale
//! feature maps, unit-normalised per location, squared differences averaged
//! over space and scales.

use image::imageops::FilterType;
use image::RgbImage;

use crate::error::{EvalError, Result};
use crate::features::Planes;

pub trait PerceptualMetric: Send + Sync {
    fn id(&self) -> &str;
    /// Distance between images of identical dimensions.
    fn distance(&self, a: &RgbImage, b: &RgbImage) -> Result<f64>;
}

/// What to do when the two images differ in size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizePolicy {
    /// Resample the second image to the first one's size (triangle filter).
    #[default]
    ResizeSecond,
    Reject,
}

pub const FILTER_BANK_ID: &str = "filterbank-perceptual/v1";
const FEATURES: usize = 12;
const MIN_SIDE: usize = 8;
const EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy)]
pub struct FilterBankMetric {
    pub scales: usize,
}

impl Default for FilterBankMetric {
    fn default() -> Self {
        Self { scales: 4 }
    }
}

fn unit_features(p: &Planes) -> Vec<[f64; FEATURES]> {
    let mut out = Vec::with_capacity(p.width * p.height);
    for y in 0..p.height as isize {
        for x in 0..p.width as isize {
            let mut f = [0.0; FEATURES];
            for c in 0..3 {
                let v = p.clamped(c, x, y);
                let dx = (p.clamped(c, x + 1, y) - p.clamped(c, x - 1, y)) / 2.0;
                let dy = (p.clamped(c, x, y + 1) - p.clamped(c, x, y - 1)) / 2.0;
                let lap = 4.0 * v
                    - p.clamped(c, x - 1, y)
                    - p.clamped(c, x + 1, y)
                    - p.clamped(c, x, y - 1)
                    - p.clamped(c, x, y + 1);
                f[4 * c..4 * c + 4].copy_from_slice(&[v, dx * 4.0, dy * 4.0, lap]);
            }
            let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt() + EPS;
            out.push(f.map(|v| v / norm));
        }
    }
    out
}

impl PerceptualMetric for FilterBankMetric {
    fn id(&self) -> &str {
        FILTER_BANK_ID
    }

    fn distance(&self, a: &RgbImage, b: &RgbImage) -> Result<f64> {
        if a.dimensions() != b.dimensions() {
            return Err(EvalError::param(format!(
                "perceptual distance needs equal sizes, got {:?} and {:?}",
                a.dimensions(),
                b.dimensions()
            )));
        }
        if a.width() == 0 || a.height() == 0 {
            return Err(EvalError::param("perceptual distance of an empty image"));
        }
        let (mut pa, mut pb) = (Planes::opponent(a), Planes::opponent(b));
        let mut total = 0.0;
        let mut used = 0;
        for s in 0..self.scales.max(1) {
            if s > 0 {
                if pa.width / 2 < MIN_SIDE || pa.height / 2 < MIN_SIDE {
                    break;
                }
                pa = pa.pooled();
                pb = pb.pooled();
            }
            let (fa, fb) = (unit_features(&pa), unit_features(&pb));
            let sum: f64 = fa
                .iter()
                .zip(&fb)
                .map(|(u, v)| u.iter().zip(v).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
                .sum();
            total += sum / fa.len() as f64;
            used += 1;
        }
        Ok(total / used as f64)
    }
}

/// Applies `policy` and measures. The returned flag tells whether `b` was
/// resampled.
pub fn perceptual_distance(
    metric: &dyn PerceptualMetric,
    a: &RgbImage,
    b: &RgbImage,
    policy: ResizePolicy,
) -> Result<(f64, bool)> {
    if a.dimensions() == b.dimensions() {
        return Ok((metric.distance(a, b)?, false));
    }
    match policy {
        ResizePolicy::Reject => Err(EvalError::param(format!(
            "image sizes differ: {:?} vs {:?}",
            a.dimensions(),
            b.dimensions()
        ))),
        ResizePolicy::ResizeSecond => {
            let resized = image::imageops::resize(b, a.width(), a.height(), FilterType::Triangle);
            Ok((metric.distance(a, &resized)?, true))
        }
    }
}
