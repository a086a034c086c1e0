//! Weight-free adapters with real image-processing behaviour.

use image::imageops::{self, FilterType};
use image::RgbImage;
use insertkit_core::{make_mask, BinaryMask, MaskResolution, DEFAULT_MASK_THRESHOLD};

use crate::error::Result;
use crate::traits::{Segmenter, Upscaler};

/// Lanczos-3 resampling.
#[derive(Debug, Clone, Default)]
pub struct LanczosUpscaler;

impl Upscaler for LanczosUpscaler {
    fn id(&self) -> &str {
        "classical:lanczos3"
    }

    fn supported_factors(&self) -> &[u32] {
        &[1, 2, 4]
    }

    fn upscale(&self, image: &RgbImage, factor: u32) -> Result<RgbImage> {
        self.check_factor(factor)?;
        if factor == 1 {
            return Ok(image.clone());
        }
        Ok(imageops::resize(
            image,
            image.width() * factor,
            image.height() * factor,
            FilterType::Lanczos3,
        ))
    }
}

/// Threshold mask reduced to its largest 8-connected component, with holes
/// (background regions not connected to the border) filled.
#[derive(Debug, Clone)]
pub struct ThresholdSegmenter {
    pub threshold: f32,
}

impl Default for ThresholdSegmenter {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_MASK_THRESHOLD,
        }
    }
}

const NEIGHBOURS_8: [(i64, i64); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];
const NEIGHBOURS_4: [(i64, i64); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];

/// Labels the connected region of cells equal to `value` reachable from `seeds`.
fn flood(mask: &BinaryMask, value: u8, seeds: &[(usize, usize)], nbrs: &[(i64, i64)], seen: &mut [bool]) -> Vec<usize> {
    let (w, h) = (mask.width(), mask.height());
    let mut stack: Vec<(usize, usize)> = seeds
        .iter()
        .copied()
        .filter(|&(x, y)| mask.get(y, x) == value && !seen[y * w + x])
        .collect();
    for &(x, y) in &stack {
        seen[y * w + x] = true;
    }
    let mut region = Vec::new();
    while let Some((x, y)) = stack.pop() {
        region.push(y * w + x);
        for (dx, dy) in nbrs {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            if !seen[ny * w + nx] && mask.get(ny, nx) == value {
                seen[ny * w + nx] = true;
                stack.push((nx, ny));
            }
        }
    }
    region
}

pub fn largest_component_filled(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut best: Vec<usize> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) == 1 && !seen[y * w + x] {
                let region = flood(mask, 1, &[(x, y)], &NEIGHBOURS_8, &mut seen);
                if region.len() > best.len() {
                    best = region;
                }
            }
        }
    }
    let mut component = BinaryMask::zeros(h, w, mask.resolution());
    for i in &best {
        component.set(i / w, i % w, true);
    }
    let border: Vec<(usize, usize)> = (0..w)
        .flat_map(|x| [(x, 0), (x, h.saturating_sub(1))])
        .chain((0..h).flat_map(|y| [(0, y), (w.saturating_sub(1), y)]))
        .collect();
    let mut outside_seen = vec![false; w * h];
    let outside = flood(&component, 0, &border, &NEIGHBOURS_4, &mut outside_seen);
    let mut filled = BinaryMask::ones(h, w, mask.resolution());
    for i in outside {
        filled.set(i / w, i % w, false);
    }
    filled
}

impl Segmenter for ThresholdSegmenter {
    fn id(&self) -> &str {
        "classical:threshold"
    }

    fn segment(&self, image: &RgbImage, _category: &str) -> Result<Option<BinaryMask>> {
        let out = make_mask(image, self.threshold)?;
        if out.empty {
            return Ok(None);
        }
        debug_assert_eq!(out.mask.resolution(), MaskResolution::Pixel);
        Ok(Some(largest_component_filled(&out.mask)))
    }
}
