#![allow(dead_code)]

use std::sync::Arc;

use image::{DynamicImage, Rgb, RgbImage};
use insertkit_adapters::toy::{ToyBackgroundGenerator, ToyDenoiser};
use insertkit_adapters::{AdapterSet, BackgroundGenerator};
use insertkit_pipeline::{InsertRequest, PipelineConfig, PlacementSpec, PromptSpec, TemplateId};

/// Red rounded blob with a dark outline on white.
pub fn object(size: u32) -> RgbImage {
    let c = size as f64 / 2.0;
    RgbImage::from_fn(size, size, |x, y| {
        let d = ((x as f64 + 0.5 - c).powi(2) + (y as f64 + 0.5 - c).powi(2)).sqrt() / c;
        if d < 0.6 {
            Rgb([200, (40 + x * 2 % 60) as u8, 40])
        } else if d < 0.7 {
            Rgb([20, 20, 20])
        } else {
            Rgb([255, 255, 255])
        }
    })
}

/// Line drawing: dark outline, white interior.
pub fn line_drawing(size: u32) -> RgbImage {
    let c = size as f64 / 2.0;
    RgbImage::from_fn(size, size, |x, y| {
        let d = ((x as f64 + 0.5 - c).powi(2) + (y as f64 + 0.5 - c).powi(2)).sqrt() / c;
        if (0.5..0.7).contains(&d) || (x as f64 - c).abs() < size as f64 / 16.0 && d < 0.5 {
            Rgb([30, 30, 30])
        } else {
            Rgb([255, 255, 255])
        }
    })
}

pub fn background(w: u32, h: u32) -> RgbImage {
    ToyBackgroundGenerator.generate("a quiet street", 7, (w, h)).unwrap()
}

pub fn request(obj: u32, canvas: u32, x: i64, y: i64) -> InsertRequest {
    InsertRequest {
        object: DynamicImage::ImageRgb8(object(obj)),
        background: Some(background(canvas, canvas)),
        placement: PlacementSpec::new(x, y, 1.0, (canvas, canvas)),
        prompt: PromptSpec::new("bicycle", "red", "city street", TemplateId::Insertion),
        segment_category: None,
    }
}

pub fn fast_config() -> PipelineConfig {
    PipelineConfig {
        compose_steps: 20,
        refine_inference_steps: 10,
        refine_noise_steps: 2,
        colorize_steps: 10,
        seed: 11,
        ..Default::default()
    }
}

pub fn zero_denoiser_set() -> AdapterSet {
    let mut set = AdapterSet::toy();
    set.base.denoiser = Arc::new(ToyDenoiser::zero());
    set.refiner.denoiser = Arc::new(ToyDenoiser::zero());
    set
}
