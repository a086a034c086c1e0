//! Conversions between 8-bit RGB images and planar float buffers.

use image::{Rgb, RgbImage};

/// `[3, H, W]` planes in `[-1, 1]`.
pub fn to_signed_planes(image: &RgbImage) -> Vec<f32> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut out = vec![0.0f32; 3 * w * h];
    for (x, y, p) in image.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..3 {
            out[c * w * h + i] = p.0[c] as f32 / 127.5 - 1.0;
        }
    }
    out
}

/// Inverse of [`to_signed_planes`], clamping and rounding to 8 bits.
pub fn from_signed_planes(planes: &[f32], width: usize, height: usize) -> RgbImage {
    let plane = width * height;
    RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let i = y as usize * width + x as usize;
        let px = |c: usize| quantize((planes[c * plane + i] + 1.0) * 127.5);
        Rgb([px(0), px(1), px(2)])
    })
}

pub fn quantize(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Mean absolute per-channel difference in 8-bit units.
pub fn mean_abs_diff(a: &RgbImage, b: &RgbImage) -> f64 {
    assert_eq!(a.dimensions(), b.dimensions());
    let total: u64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| (x as i32 - y as i32).unsigned_abs() as u64)
        .sum();
    total as f64 / a.as_raw().len().max(1) as f64
}
