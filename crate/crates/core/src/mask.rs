use image::{GrayImage, Luma, RgbImage, RgbaImage};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Default brightness threshold as a fraction of full intensity.
pub const DEFAULT_MASK_THRESHOLD: f32 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskResolution {
    Pixel,
    Latent,
}

/// Row-major `{0,1}` mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
    resolution: MaskResolution,
}

/// Result of thresholding: the mask plus whether it came out empty.
#[derive(Debug, Clone)]
pub struct MaskOutcome {
    pub mask: BinaryMask,
    pub empty: bool,
}

/// Marks every pixel as object (1) unless all three channels are brighter
/// than `threshold` times full intensity, which marks it background (0).
///
/// Using the darkest channel keeps saturated bright colours (pure yellow,
/// cyan) on the object side.
pub fn make_mask(image: &RgbImage, threshold: f32) -> Result<MaskOutcome> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(CoreError::param(format!(
            "mask threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let cutoff = threshold * 255.0;
    let data: Vec<u8> = image
        .pixels()
        .map(|p| {
            let darkest = p.0.iter().copied().min().unwrap_or(0) as f32;
            u8::from(darkest <= cutoff)
        })
        .collect();
    let mask = BinaryMask {
        height: image.height() as usize,
        width: image.width() as usize,
        data,
        resolution: MaskResolution::Pixel,
    };
    let empty = mask.is_empty();
    Ok(MaskOutcome { mask, empty })
}

/// Mask from an alpha channel: opaque (alpha ≥ 128) pixels are object.
pub fn mask_from_alpha(image: &RgbaImage) -> BinaryMask {
    BinaryMask {
        height: image.height() as usize,
        width: image.width() as usize,
        data: image.pixels().map(|p| u8::from(p.0[3] >= 128)).collect(),
        resolution: MaskResolution::Pixel,
    }
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>, resolution: MaskResolution) -> Result<Self> {
        if data.len() != height * width {
            return Err(CoreError::param(format!(
                "mask data has {} entries, {}x{} needs {}",
                data.len(),
                height,
                width,
                height * width
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(CoreError::param("mask values must be exactly 0 or 1"));
        }
        Ok(Self {
            height,
            width,
            data,
            resolution,
        })
    }

    pub fn zeros(height: usize, width: usize, resolution: MaskResolution) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
            resolution,
        }
    }

    pub fn ones(height: usize, width: usize, resolution: MaskResolution) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
            resolution,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn resolution(&self) -> MaskResolution {
        self.resolution
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.data[y * self.width + x] = u8::from(value);
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn area_fraction(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.count_ones() as f64 / self.data.len() as f64
    }

    /// True when no cell is set.
    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn is_full(&self) -> bool {
        self.data.iter().all(|&v| v == 1)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            data: self.data.iter().map(|&v| 1 - v).collect(),
            ..self.clone()
        }
    }

    /// Latent-resolution mask: a cell is set iff the fraction of set pixels
    /// in its `factor`×`factor` block reaches `coverage`.
    pub fn downsample(&self, factor: usize, coverage: f64) -> Result<BinaryMask> {
        if factor == 0 {
            return Err(CoreError::param("downsample factor must be positive"));
        }
        if !(coverage > 0.0 && coverage <= 1.0) {
            return Err(CoreError::param(format!(
                "coverage must lie in (0, 1], got {coverage}"
            )));
        }
        if self.height % factor != 0 || self.width % factor != 0 {
            return Err(CoreError::param(format!(
                "mask {}x{} is not divisible by factor {factor}",
                self.height, self.width
            )));
        }
        let (lh, lw) = (self.height / factor, self.width / factor);
        let needed = coverage * (factor * factor) as f64;
        let mut data = Vec::with_capacity(lh * lw);
        for by in 0..lh {
            for bx in 0..lw {
                let mut count = 0usize;
                for y in by * factor..(by + 1) * factor {
                    let row = &self.data[y * self.width + bx * factor..y * self.width + (bx + 1) * factor];
                    count += row.iter().map(|&v| v as usize).sum::<usize>();
                }
                data.push(u8::from(count as f64 >= needed));
            }
        }
        Ok(BinaryMask {
            height: lh,
            width: lw,
            data,
            resolution: MaskResolution::Latent,
        })
    }

    /// Nearest-neighbour replication back to pixel resolution.
    pub fn upsample(&self, factor: usize) -> BinaryMask {
        let (h, w) = (self.height * factor, self.width * factor);
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(self.get(y / factor, x / factor));
            }
        }
        BinaryMask {
            height: h,
            width: w,
            data,
            resolution: MaskResolution::Pixel,
        }
    }

    /// Inclusive-exclusive `(x0, y0, x1, y1)` box around the set cells.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) == 1 {
                    bbox = Some(match bbox {
                        None => (x, y, x + 1, y + 1),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
                    });
                }
            }
        }
        bbox
    }

    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([self.get(y as usize, x as usize) * 255])
        })
    }

    /// Reads a mask image; any value ≥ 128 is set.
    pub fn from_gray_image(image: &GrayImage, resolution: MaskResolution) -> BinaryMask {
        BinaryMask {
            height: image.height() as usize,
            width: image.width() as usize,
            data: image.pixels().map(|p| u8::from(p.0[0] >= 128)).collect(),
            resolution,
        }
    }
}
