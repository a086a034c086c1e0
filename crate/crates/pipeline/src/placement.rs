use image::imageops::{self, FilterType};
use image::{DynamicImage, Rgb, RgbImage};
use insertkit_core::{make_mask, BinaryMask, MaskResolution};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

/// Where the object goes: top-left corner of its scaled bounding box on the
/// canvas, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementSpec {
    pub x: i64,
    pub y: i64,
    pub scale: f64,
    pub canvas_size: (u32, u32),
}

impl PlacementSpec {
    pub fn new(x: i64, y: i64, scale: f64, canvas_size: (u32, u32)) -> Self {
        Self { x, y, scale, canvas_size }
    }

    /// Object dimensions after scaling.
    pub fn scaled_dims(&self, object: (u32, u32)) -> (u32, u32) {
        let s = |v: u32| ((v as f64 * self.scale).round() as u32).max(1);
        (s(object.0), s(object.1))
    }

    pub fn validate(&self, object: (u32, u32)) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(PipelineError::param(format!("scale must be positive, got {}", self.scale)));
        }
        let (cw, ch) = self.canvas_size;
        if cw == 0 || ch == 0 {
            return Err(PipelineError::param("canvas must be non-empty"));
        }
        let (w, h) = self.scaled_dims(object);
        if self.x < 0 || self.y < 0 || self.x + w as i64 > cw as i64 || self.y + h as i64 > ch as i64 {
            return Err(PipelineError::param(format!(
                "object box {w}x{h} at ({}, {}) leaves the {cw}x{ch} canvas",
                self.x, self.y
            )));
        }
        Ok(())
    }

    /// Closest valid placement: the scale shrinks until the object fits, then
    /// the corner moves inside the canvas.
    pub fn clamped(&self, object: (u32, u32)) -> PlacementSpec {
        let (cw, ch) = self.canvas_size;
        let fit = (cw as f64 / object.0.max(1) as f64).min(ch as f64 / object.1.max(1) as f64);
        let mut scale = if self.scale.is_finite() && self.scale > 0.0 { self.scale } else { 1.0 };
        scale = scale.min(fit);
        let mut out = PlacementSpec { scale, ..*self };
        while out.scale > 0.0 {
            let (w, h) = out.scaled_dims(object);
            if w <= cw && h <= ch {
                break;
            }
            out.scale *= 0.999;
        }
        let (w, h) = out.scaled_dims(object);
        out.x = self.x.clamp(0, (cw - w.min(cw)) as i64);
        out.y = self.y.clamp(0, (ch - h.min(ch)) as i64);
        out
    }
}

/// Object pasted on a canvas plus the pixel mask of the pasted pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Placed {
    pub image: RgbImage,
    pub mask: BinaryMask,
}

fn object_mask(object: &DynamicImage, threshold: f32) -> Result<(RgbImage, BinaryMask)> {
    let rgb = object.to_rgb8();
    if object.color().has_alpha() {
        let rgba = object.to_rgba8();
        if rgba.pixels().any(|p| p.0[3] < 255) {
            let data = rgba.pixels().map(|p| (p.0[3] >= 128) as u8).collect();
            let mask = BinaryMask::new(rgb.height() as usize, rgb.width() as usize, data, MaskResolution::Pixel)?;
            return Ok((rgb, mask));
        }
    }
    let mask = make_mask(&rgb, threshold)?.mask;
    Ok((rgb, mask))
}

fn resize(object: &DynamicImage, dims: (u32, u32)) -> DynamicImage {
    if (object.width(), object.height()) == dims {
        object.clone()
    } else {
        object.resize_exact(dims.0, dims.1, FilterType::Triangle)
    }
}

/// Scales the object, masks it (alpha channel when present, brightness
/// threshold otherwise) and pastes the masked pixels onto `background`.
pub fn place_object(
    object: &DynamicImage,
    background: &RgbImage,
    placement: &PlacementSpec,
    threshold: f32,
) -> Result<Placed> {
    if background.dimensions() != placement.canvas_size {
        return Err(PipelineError::param(format!(
            "background is {}x{} but the placement canvas is {}x{}",
            background.width(),
            background.height(),
            placement.canvas_size.0,
            placement.canvas_size.1
        )));
    }
    placement.validate((object.width(), object.height()))?;
    let dims = placement.scaled_dims((object.width(), object.height()));
    let (rgb, obj_mask) = object_mask(&resize(object, dims), threshold)?;
    let (cw, ch) = placement.canvas_size;
    let mut image = background.clone();
    let mut mask = BinaryMask::zeros(ch as usize, cw as usize, MaskResolution::Pixel);
    let (ox, oy) = (placement.x as u32, placement.y as u32);
    for (x, y, p) in rgb.enumerate_pixels() {
        if obj_mask.get(y as usize, x as usize) == 1 {
            image.put_pixel(ox + x, oy + y, *p);
            mask.set((oy + y) as usize, (ox + x) as usize, true);
        }
    }
    Ok(Placed { image, mask })
}

pub fn white_canvas((w, h): (u32, u32)) -> RgbImage {
    RgbImage::from_pixel(w, h, Rgb([255, 255, 255]))
}

/// Mask overlay for previews: masked pixels tinted red.
pub fn mask_overlay(placed: &Placed) -> RgbImage {
    let mut out = placed.image.clone();
    for (x, y, p) in out.enumerate_pixels_mut() {
        if placed.mask.get(y as usize, x as usize) == 1 {
            let [r, g, b] = p.0;
            *p = Rgb([((r as u16 + 255) / 2) as u8, g / 2, b / 2]);
        }
    }
    out
}

/// Thumbnail with the longer side at most `max_side`.
pub fn thumbnail(image: &RgbImage, max_side: u32) -> RgbImage {
    let (w, h) = image.dimensions();
    if w.max(h) <= max_side {
        return image.clone();
    }
    let s = max_side as f64 / w.max(h) as f64;
    imageops::thumbnail(image, ((w as f64 * s) as u32).max(1), ((h as f64 * s) as u32).max(1))
}
