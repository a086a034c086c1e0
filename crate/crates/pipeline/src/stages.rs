//! Single-stage operations. Each is a pure function of its inputs, the
//! adapters and a seed, so stages can be run one at a time (as the server
//! does) or chained by [`crate::pipeline`].

use image::imageops::FilterType;
use image::{DynamicImage, Rgb, RgbImage, Rgba, RgbaImage};
use insertkit_adapters::{segment_with_fallback, AdapterSet, DiffusionStack};
use insertkit_core::{
    compositor, make_mask, BinaryMask, DiffusionContext, LatentTensor, RandomSource, StepTrace, TimestepPlan,
};

use crate::config::{ColorizeMode, PipelineConfig};
use crate::error::{PipelineError, Result};
use crate::imaging::{crop, cutout, flatten_on_white, mean_saturation, pad_mask, pad_to_multiple};

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);

#[derive(Debug, Clone)]
pub struct SegmentOutput {
    pub mask: BinaryMask,
    /// The object with everything outside the mask transparent.
    pub cutout: DynamicImage,
    pub warning: Option<String>,
}

pub fn segment(adapters: &AdapterSet, image: &RgbImage, category: &str, threshold: f32) -> Result<SegmentOutput> {
    let seg = segment_with_fallback(adapters.segmenter.as_ref(), image, category, threshold)?;
    Ok(SegmentOutput {
        cutout: DynamicImage::ImageRgba8(cutout(image, &seg.mask)),
        mask: seg.mask,
        warning: seg.warning,
    })
}

/// Whether the object should be colorized under `cfg.colorize`.
pub fn needs_colorization(object: &DynamicImage, cfg: &PipelineConfig) -> Result<bool> {
    match cfg.colorize {
        ColorizeMode::Off => Ok(false),
        ColorizeMode::Force => Ok(true),
        ColorizeMode::Auto => {
            let rgb = flatten_on_white(object);
            let mask = make_mask(&rgb, cfg.mask_threshold)?.mask;
            Ok(mean_saturation(&rgb, &mask).is_some_and(|s| s < cfg.saturation_threshold))
        }
    }
}

#[derive(Debug, Clone)]
pub struct ColorizeOutput {
    /// Colorized object at the working resolution.
    pub image: RgbImage,
    /// The upscaled input, when upscaling happened.
    pub upscaled: Option<RgbImage>,
    pub upscale_factor: u32,
    /// Pixel mask of the object at the working resolution.
    pub mask: BinaryMask,
}

/// Masked image-to-image colorization: the object region is re-synthesised
/// from the colorization prompt while everything outside the object mask is
/// pinned to the input, both in latent space and by a final pixel paste-back.
pub fn colorize(
    adapters: &AdapterSet,
    object: &DynamicImage,
    prompt: &str,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<ColorizeOutput> {
    let rgb = flatten_on_white(object);
    let mask = make_mask(&rgb, cfg.mask_threshold)?;
    if mask.empty {
        return Err(PipelineError::param("object mask is empty; nothing to colorize"));
    }
    let (work, mask, upscaled, factor) = if rgb.width().max(rgb.height()) <= cfg.colorize_upscale_max_side {
        let f = cfg.upscale_factor;
        let up = adapters.upscaler.upscale(&rgb, f)?;
        (up.clone(), mask.mask.upsample(f as usize), Some(up), f)
    } else {
        (rgb, mask.mask, None, 1)
    };

    let stack = &adapters.refiner;
    let f = stack.codec.spatial_factor();
    let padded = pad_to_multiple(&work, f as u32, WHITE);
    let padded_mask = pad_mask(&mask, padded.width() as usize, padded.height() as usize);
    let latent_mask = padded_mask.downsample(f, cfg.mask_coverage)?;
    let pinned = latent_mask.complement();

    let z = stack.codec.encode(&padded)?;
    let plan = TimestepPlan::standard(stack.schedule.train_steps(), cfg.colorize_steps)?
        .with_strength(cfg.colorize_strength)?;
    let embedding = stack.text.embed(prompt)?.embedding;
    let ctx = DiffusionContext {
        denoiser: &*stack.denoiser,
        prompt: &embedding,
        guidance_scale: cfg.colorize_guidance,
        schedule: &stack.schedule,
        mode: cfg.update_mode,
    };
    let mut rng = RandomSource::new(seed);
    let out = compositor::run_masked_diffusion(&ctx, &z, Some(&z), &pinned, &plan, &mut rng)?;
    let decoded = crop(&stack.codec.decode(&out)?, work.dimensions());

    let image = RgbImage::from_fn(work.width(), work.height(), |x, y| {
        if mask.get(y as usize, x as usize) == 1 {
            *decoded.get_pixel(x, y)
        } else {
            *work.get_pixel(x, y)
        }
    });
    Ok(ColorizeOutput {
        image,
        upscaled,
        upscale_factor: factor,
        mask,
    })
}

/// The colorized object at the size of `original`, with its alpha channel.
pub fn restore_colorized(original: &DynamicImage, out: &ColorizeOutput) -> DynamicImage {
    let rgb = if out.image.dimensions() != (original.width(), original.height()) {
        image::imageops::resize(&out.image, original.width(), original.height(), FilterType::Lanczos3)
    } else {
        out.image.clone()
    };
    if !original.color().has_alpha() {
        return DynamicImage::ImageRgb8(rgb);
    }
    let alpha = original.to_rgba8();
    DynamicImage::ImageRgba8(RgbaImage::from_fn(rgb.width(), rgb.height(), |x, y| {
        let [r, g, b] = rgb.get_pixel(x, y).0;
        Rgba([r, g, b, alpha.get_pixel(x, y).0[3]])
    }))
}

/// Latent snapshot handed to a compose observer.
pub type ComposeObserver<'o> = &'o mut dyn FnMut(&StepTrace<'_>);

#[derive(Debug, Clone)]
pub struct ComposeOutput {
    pub image: RgbImage,
    /// Final composite latent; `None` when the stage was bypassed.
    pub latent: Option<LatentTensor>,
    /// Latent-resolution mask used by the loop.
    pub latent_mask: BinaryMask,
    pub bypassed: bool,
    pub warnings: Vec<String>,
}

fn compose_stack<'a>(adapters: &'a AdapterSet, cfg: &PipelineConfig) -> &'a DiffusionStack {
    if cfg.sdxl_compose {
        &adapters.refiner
    } else {
        &adapters.base
    }
}

fn check_divisible(image: &RgbImage, factor: usize, what: &str) -> Result<()> {
    let f = factor as u32;
    if image.width() % f != 0 || image.height() % f != 0 {
        return Err(PipelineError::param(format!(
            "{what} is {}x{}; both sides must be multiples of {f}",
            image.width(),
            image.height()
        )));
    }
    Ok(())
}

/// Intermediate composition.
///
/// `pasted` is the object placed on the canvas (on `background` when given,
/// on white otherwise) and `mask` its pixel mask. With a background the loop
/// starts from the noised pasted composition after `compose_strength` of the
/// schedule; without one it starts from pure noise. Zero active steps, or a
/// full mask with a background, return `pasted` unchanged.
pub fn compose(
    adapters: &AdapterSet,
    pasted: &RgbImage,
    mask: &BinaryMask,
    background: Option<&RgbImage>,
    prompt: &str,
    cfg: &PipelineConfig,
    seed: u64,
    observer: Option<ComposeObserver<'_>>,
) -> Result<ComposeOutput> {
    let stack = compose_stack(adapters, cfg);
    let f = stack.codec.spatial_factor();
    check_divisible(pasted, f, "canvas")?;
    if (mask.width(), mask.height()) != (pasted.width() as usize, pasted.height() as usize) {
        return Err(PipelineError::param("mask and canvas sizes differ"));
    }
    let latent_mask = mask.downsample(f, cfg.mask_coverage)?;
    let mut warnings = Vec::new();
    if mask.is_empty() {
        warnings.push("object mask is empty; generating background only".to_string());
    }

    let full_plan = TimestepPlan::standard(stack.schedule.train_steps(), cfg.compose_steps)?;
    let plan = match background {
        Some(_) => full_plan.with_strength(cfg.compose_strength)?,
        None => full_plan,
    };
    let bypass = match background {
        Some(_) => plan.start_index() == 0 || latent_mask.is_full(),
        None => {
            if cfg.compose_steps == 0 {
                return Err(PipelineError::param(
                    "a generated background needs compose_steps ≥ 1",
                ));
            }
            latent_mask.is_full()
        }
    };
    if bypass {
        return Ok(ComposeOutput {
            image: pasted.clone(),
            latent: None,
            latent_mask,
            bypassed: true,
            warnings,
        });
    }

    let z_obj = stack.codec.encode(pasted)?;
    let z_bg = background.map(|bg| stack.codec.encode(bg)).transpose()?;
    let embedding = stack.text.embed(prompt)?.embedding;
    let ctx = DiffusionContext {
        denoiser: &*stack.denoiser,
        prompt: &embedding,
        guidance_scale: cfg.compose_guidance,
        schedule: &stack.schedule,
        mode: cfg.update_mode,
    };
    let mut rng = RandomSource::new(seed);
    let mut noop = |_: &StepTrace<'_>| {};
    let observer = observer.unwrap_or(&mut noop);
    let latent =
        compositor::run_masked_diffusion_traced(&ctx, &z_obj, z_bg.as_ref(), &latent_mask, &plan, &mut rng, observer)?;
    Ok(ComposeOutput {
        image: stack.codec.decode(&latent)?,
        latent: Some(latent),
        latent_mask,
        bypassed: false,
        warnings,
    })
}

/// Noising/denoising refinement with the refiner model. The composed latent
/// is used directly when `refine_in_latent` is set and both stages share a
/// codec; otherwise `image` is re-encoded.
pub fn refine(
    adapters: &AdapterSet,
    image: &RgbImage,
    composed_latent: Option<&LatentTensor>,
    prompt: &str,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<RgbImage> {
    if cfg.refine_noise_steps == 0 {
        return Ok(image.clone());
    }
    let stack = &adapters.refiner;
    let compose_codec = compose_stack(adapters, cfg).codec.id();
    let latent = match composed_latent {
        Some(z) if cfg.refine_in_latent && compose_codec == stack.codec.id() => z.clone(),
        _ => {
            check_divisible(image, stack.codec.spatial_factor(), "refinement input")?;
            stack.codec.encode(image)?
        }
    };
    let plan = TimestepPlan::standard(stack.schedule.train_steps(), cfg.refine_inference_steps)?;
    let embedding = stack.text.embed(prompt)?.embedding;
    let ctx = DiffusionContext {
        denoiser: &*stack.denoiser,
        prompt: &embedding,
        guidance_scale: cfg.refine_guidance,
        schedule: &stack.schedule,
        mode: cfg.update_mode,
    };
    let mut rng = RandomSource::new(seed);
    let out = compositor::refine(&ctx, &latent, cfg.refine_noise_steps, &plan, &mut rng)?;
    Ok(stack.codec.decode(&out)?)
}

pub fn generate_background(adapters: &AdapterSet, prompt: &str, seed: u64, size: (u32, u32)) -> Result<RgbImage> {
    let image = adapters.bg_generator.generate(prompt, seed, size)?;
    if image.dimensions() != size {
        return Err(PipelineError::param(format!(
            "background generator `{}` returned {:?}, requested {size:?}",
            adapters.bg_generator.id(),
            image.dimensions()
        )));
    }
    Ok(image)
}
