//! The full set of adapters one pipeline run uses.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use insertkit_core::{Denoiser, NoiseSchedule};

use crate::classical::{LanczosUpscaler, ThresholdSegmenter};
use crate::error::{AdapterError, Result};
use crate::registry::{ModelEntry, ModelRegistry, ModelRole};
use crate::toy::{PriorDenoiser, ToyBackgroundGenerator, ToyCodec, ToySegmenter, ToyTextEncoder, ToyUpscaler};
use crate::traits::{BackgroundGenerator, LatentCodec, Segmenter, TextEncoder, Upscaler};

pub type SharedDenoiser = Arc<dyn Denoiser + Send + Sync>;

/// Prior width of the toy denoiser, in latent units.
pub const TOY_PRIOR_SIGMA: f32 = 0.5;

/// Codec, denoiser, text encoder and noise schedule of one diffusion model.
#[derive(Clone)]
pub struct DiffusionStack {
    pub codec: Arc<dyn LatentCodec>,
    pub denoiser: SharedDenoiser,
    pub text: Arc<dyn TextEncoder>,
    pub schedule: NoiseSchedule,
}

impl DiffusionStack {
    pub fn toy() -> Self {
        let schedule = NoiseSchedule::scaled_linear_default();
        Self {
            codec: Arc::new(ToyCodec),
            denoiser: Arc::new(PriorDenoiser::new(schedule.clone(), TOY_PRIOR_SIGMA).with_prompt_gain(0.01)),
            text: Arc::new(ToyTextEncoder),
            schedule,
        }
    }
}

#[derive(Clone)]
pub struct AdapterSet {
    /// Composition model.
    pub base: DiffusionStack,
    /// Refinement and colorization model.
    pub refiner: DiffusionStack,
    pub upscaler: Arc<dyn Upscaler>,
    pub segmenter: Arc<dyn Segmenter>,
    pub bg_generator: Arc<dyn BackgroundGenerator>,
    pub registry: ModelRegistry,
}

fn builtin_upscaler(entry: &ModelEntry) -> Option<Arc<dyn Upscaler>> {
    match entry.identifier.as_str() {
        i if i.starts_with("toy:") => Some(Arc::new(ToyUpscaler)),
        "classical:lanczos3" => Some(Arc::new(LanczosUpscaler)),
        _ => None,
    }
}

fn builtin_segmenter(entry: &ModelEntry) -> Option<Arc<dyn Segmenter>> {
    match entry.identifier.as_str() {
        i if i.starts_with("toy:") => Some(Arc::new(ToySegmenter::default())),
        "classical:threshold" => Some(Arc::new(ThresholdSegmenter::default())),
        _ => None,
    }
}

fn entry(registry: &ModelRegistry, role: ModelRole) -> Result<&ModelEntry> {
    registry
        .get(role)
        .ok_or_else(|| AdapterError::Registry(format!("no model registered for role `{role}`")))
}

fn all_toy(registry: &ModelRegistry, roles: &[ModelRole]) -> Result<bool> {
    let toys = roles
        .iter()
        .map(|&r| entry(registry, r).map(ModelEntry::is_toy))
        .collect::<Result<Vec<_>>>()?;
    if toys.iter().all(|&t| t) {
        Ok(true)
    } else if toys.iter().any(|&t| t) {
        Err(AdapterError::Registry(format!(
            "roles {roles:?} must be either all toy adapters or all real models"
        )))
    } else {
        Ok(false)
    }
}

const BASE_ROLES: [ModelRole; 4] = [
    ModelRole::Encoder,
    ModelRole::Decoder,
    ModelRole::BaseDenoiser,
    ModelRole::TextEncoder,
];

impl AdapterSet {
    /// Every role backed by a toy adapter.
    pub fn toy() -> Self {
        Self {
            base: DiffusionStack::toy(),
            refiner: DiffusionStack::toy(),
            upscaler: Arc::new(ToyUpscaler),
            segmenter: Arc::new(ToySegmenter::default()),
            bg_generator: Arc::new(ToyBackgroundGenerator),
            registry: ModelRegistry::toy(),
        }
    }

    /// Builds each role from the registry. Toy and `classical:` entries need
    /// nothing on disk; other entries need their weights in `cache_root` and
    /// a build with the `candle` feature.
    pub fn load(registry: &ModelRegistry, cache_root: &Path) -> Result<Self> {
        let base = if all_toy(registry, &BASE_ROLES)? {
            DiffusionStack::toy()
        } else {
            real::base_stack(registry, cache_root)?
        };
        let refiner = if entry(registry, ModelRole::RefinerDenoiser)?.is_toy() {
            DiffusionStack::toy()
        } else {
            real::sdxl_stack(registry, ModelRole::RefinerDenoiser, cache_root)?
        };
        let upscaler = match builtin_upscaler(entry(registry, ModelRole::Upscaler)?) {
            Some(u) => u,
            None => real::upscaler(registry, cache_root)?,
        };
        let segmenter = match builtin_segmenter(entry(registry, ModelRole::Segmenter)?) {
            Some(s) => s,
            None => real::segmenter(registry, cache_root)?,
        };
        let bg_generator: Arc<dyn BackgroundGenerator> = if entry(registry, ModelRole::BgGenerator)?.is_toy() {
            Arc::new(ToyBackgroundGenerator)
        } else {
            real::bg_generator(registry, cache_root)?
        };
        Ok(Self {
            base,
            refiner,
            upscaler,
            segmenter,
            bg_generator,
            registry: registry.clone(),
        })
    }

    /// Adapter identifier per role, for run manifests.
    pub fn model_ids(&self) -> BTreeMap<String, String> {
        let mut ids = BTreeMap::new();
        ids.insert("codec".into(), self.base.codec.id().to_string());
        ids.insert("base_denoiser".into(), self.base.denoiser.id().to_string());
        ids.insert("text_encoder".into(), self.base.text.id().to_string());
        ids.insert("refiner_codec".into(), self.refiner.codec.id().to_string());
        ids.insert("refiner_denoiser".into(), self.refiner.denoiser.id().to_string());
        ids.insert("refiner_text_encoder".into(), self.refiner.text.id().to_string());
        ids.insert("upscaler".into(), self.upscaler.id().to_string());
        ids.insert("segmenter".into(), self.segmenter.id().to_string());
        ids.insert("bg_generator".into(), self.bg_generator.id().to_string());
        ids
    }
}

#[cfg(feature = "candle")]
mod real {
    pub use crate::candle_backend::{base_stack, bg_generator, sdxl_stack, segmenter, upscaler};
}

#[cfg(not(feature = "candle"))]
mod real {
    use std::path::Path;
    use std::sync::Arc;

    use super::DiffusionStack;
    use crate::error::{AdapterError, Result};
    use crate::registry::{ModelRegistry, ModelRole};
    use crate::traits::{BackgroundGenerator, Segmenter, Upscaler};

    fn unavailable(registry: &ModelRegistry, role: ModelRole, cache_root: &Path) -> AdapterError {
        if let Err(missing) = registry.resolve(role, cache_root) {
            return missing;
        }
        let id = registry.get(role).map(|e| e.identifier.clone()).unwrap_or_default();
        AdapterError::model(id, "this build has no neural backend; rebuild with `--features candle`")
    }

    pub fn base_stack(registry: &ModelRegistry, cache_root: &Path) -> Result<DiffusionStack> {
        Err(unavailable(registry, ModelRole::BaseDenoiser, cache_root))
    }

    pub fn sdxl_stack(registry: &ModelRegistry, role: ModelRole, cache_root: &Path) -> Result<DiffusionStack> {
        Err(unavailable(registry, role, cache_root))
    }

    pub fn upscaler(registry: &ModelRegistry, cache_root: &Path) -> Result<Arc<dyn Upscaler>> {
        Err(unavailable(registry, ModelRole::Upscaler, cache_root))
    }

    pub fn segmenter(registry: &ModelRegistry, cache_root: &Path) -> Result<Arc<dyn Segmenter>> {
        Err(unavailable(registry, ModelRole::Segmenter, cache_root))
    }

    pub fn bg_generator(registry: &ModelRegistry, cache_root: &Path) -> Result<Arc<dyn BackgroundGenerator>> {
        Err(unavailable(registry, ModelRole::BgGenerator, cache_root))
    }
}
