//! Image helpers shared by the stages.

use std::path::Path;

use image::{DynamicImage, ImageFormat, Rgb, RgbImage, Rgba, RgbaImage};
use insertkit_core::BinaryMask;
use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Seed for `stage` / `variant` derived from the run seed.
pub fn stage_seed(base: u64, stage: &str, variant: usize) -> u64 {
    let digest = Sha256::digest(format!("{base}/{stage}/{variant}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn encode_png(image: &DynamicImage) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    image
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| PipelineError::param(format!("png encoding failed: {e}")))?;
    Ok(out.into_inner())
}

pub fn decode_image(bytes: &[u8]) -> Result<DynamicImage> {
    image::load_from_memory(bytes).map_err(|e| PipelineError::param(format!("cannot decode image: {e}")))
}

pub fn load_image(path: &Path) -> Result<DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    image::load_from_memory(&bytes).map_err(|e| PipelineError::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(load_image(path)?.to_rgb8())
}

/// Alpha-composites over white; opaque images are returned unchanged.
pub fn flatten_on_white(image: &DynamicImage) -> RgbImage {
    if !image.color().has_alpha() {
        return image.to_rgb8();
    }
    let rgba = image.to_rgba8();
    RgbImage::from_fn(rgba.width(), rgba.height(), |x, y| {
        let Rgba([r, g, b, a]) = *rgba.get_pixel(x, y);
        let mix = |c: u8| ((c as u32 * a as u32 + 255 * (255 - a as u32) + 127) / 255) as u8;
        Rgb([mix(r), mix(g), mix(b)])
    })
}

/// RGBA image whose alpha is the mask.
pub fn cutout(image: &RgbImage, mask: &BinaryMask) -> RgbaImage {
    RgbaImage::from_fn(image.width(), image.height(), |x, y| {
        let Rgb([r, g, b]) = *image.get_pixel(x, y);
        Rgba([r, g, b, if mask.get(y as usize, x as usize) == 1 { 255 } else { 0 }])
    })
}

/// Mean HSV saturation of the masked pixels, `None` for an empty mask.
pub fn mean_saturation(image: &RgbImage, mask: &BinaryMask) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y, p) in image.enumerate_pixels() {
        if mask.get(y as usize, x as usize) == 1 {
            let max = *p.0.iter().max().unwrap() as f64;
            let min = *p.0.iter().min().unwrap() as f64;
            sum += if max > 0.0 { (max - min) / max } else { 0.0 };
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Pads right and bottom with `fill` up to multiples of `factor`.
pub fn pad_to_multiple(image: &RgbImage, factor: u32, fill: Rgb<u8>) -> RgbImage {
    let w = image.width().div_ceil(factor) * factor;
    let h = image.height().div_ceil(factor) * factor;
    if (w, h) == image.dimensions() {
        return image.clone();
    }
    let mut out = RgbImage::from_pixel(w, h, fill);
    image::imageops::replace(&mut out, image, 0, 0);
    out
}

pub fn pad_mask(mask: &BinaryMask, width: usize, height: usize) -> BinaryMask {
    let mut out = BinaryMask::zeros(height, width, mask.resolution());
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(y, x) == 1 {
                out.set(y, x, true);
            }
        }
    }
    out
}

pub fn crop(image: &RgbImage, (w, h): (u32, u32)) -> RgbImage {
    if image.dimensions() == (w, h) {
        return image.clone();
    }
    image::imageops::crop_imm(image, 0, 0, w, h).to_image()
}

/// Side-by-side tiles of the candidates, each at most `tile` pixels on its
/// longer side, separated by 8-pixel gaps.
pub fn contact_sheet(candidates: &[RgbImage], tile: u32) -> RgbImage {
    let thumbs: Vec<RgbImage> = candidates.iter().map(|c| crate::placement::thumbnail(c, tile)).collect();
    let gap = 8;
    let width = thumbs.iter().map(|t| t.width() + gap).sum::<u32>() + gap;
    let height = thumbs.iter().map(|t| t.height()).max().unwrap_or(0) + 2 * gap;
    let mut sheet = RgbImage::from_pixel(width.max(1), height.max(1), Rgb([40, 40, 40]));
    let mut x = gap;
    for t in &thumbs {
        image::imageops::replace(&mut sheet, t, x as i64, gap as i64);
        x += t.width() + gap;
    }
    sheet
}

#[cfg(test)]
mod tests {
    use super::*;
    use insertkit_core::MaskResolution;

    #[test]
    fn saturation_of_greys_is_zero_and_of_pure_red_is_one() {
        let mask = BinaryMask::ones(2, 2, MaskResolution::Pixel);
        let grey = RgbImage::from_pixel(2, 2, Rgb([90, 90, 90]));
        assert_eq!(mean_saturation(&grey, &mask), Some(0.0));
        let red = RgbImage::from_pixel(2, 2, Rgb([200, 0, 0]));
        assert_eq!(mean_saturation(&red, &mask), Some(1.0));
        assert_eq!(mean_saturation(&red, &BinaryMask::zeros(2, 2, MaskResolution::Pixel)), None);
    }

    #[test]
    fn pad_then_crop_round_trips() {
        let img = RgbImage::from_fn(13, 9, |x, y| Rgb([x as u8, y as u8, 3]));
        let padded = pad_to_multiple(&img, 8, Rgb([255, 255, 255]));
        assert_eq!(padded.dimensions(), (16, 16));
        assert_eq!(crop(&padded, (13, 9)), img);
    }

    #[test]
    fn stage_seeds_differ_by_stage_and_variant() {
        let a = stage_seed(1, "compose", 0);
        assert_eq!(a, stage_seed(1, "compose", 0));
        assert_ne!(a, stage_seed(1, "compose", 1));
        assert_ne!(a, stage_seed(1, "refine", 0));
        assert_ne!(a, stage_seed(2, "compose", 0));
    }

    #[test]
    fn flatten_composites_over_white() {
        let mut rgba = RgbaImage::from_pixel(1, 1, Rgba([0, 0, 0, 0]));
        assert_eq!(flatten_on_white(&DynamicImage::ImageRgba8(rgba.clone())).get_pixel(0, 0), &Rgb([255, 255, 255]));
        rgba.put_pixel(0, 0, Rgba([0, 0, 0, 255]));
        assert_eq!(flatten_on_white(&DynamicImage::ImageRgba8(rgba)).get_pixel(0, 0), &Rgb([0, 0, 0]));
    }
}
