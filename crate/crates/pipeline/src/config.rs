use std::path::Path;

use insertkit_core::{UpdateMode, DEFAULT_MASK_THRESHOLD};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorizeMode {
    /// Colorize when the object's mean saturation is below the threshold.
    #[default]
    Auto,
    Force,
    Off,
}

impl std::str::FromStr for ColorizeMode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(ColorizeMode::Auto),
            "force" => Ok(ColorizeMode::Force),
            "off" => Ok(ColorizeMode::Off),
            _ => Err(PipelineError::param(format!("colorize mode must be auto, force or off, not `{s}`"))),
        }
    }
}

/// Step counts, guidance scales and strengths for every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub compose_steps: usize,
    pub compose_guidance: f32,
    /// Fraction of `compose_steps` run when a background is given.
    pub compose_strength: f64,
    pub refine_inference_steps: usize,
    pub refine_noise_steps: usize,
    pub refine_guidance: f32,
    pub colorize_steps: usize,
    pub colorize_strength: f64,
    pub colorize_guidance: f32,
    pub upscale_factor: u32,
    /// Objects whose longer side is at most this many pixels are upscaled
    /// before colorization.
    pub colorize_upscale_max_side: u32,
    pub colorize: ColorizeMode,
    pub saturation_threshold: f64,
    pub variants_k: usize,
    pub seed: u64,
    pub mask_threshold: f32,
    pub mask_coverage: f64,
    pub update_mode: UpdateMode,
    pub refine: bool,
    /// Refine the composed latent directly instead of re-encoding its pixels.
    pub refine_in_latent: bool,
    /// Compose with the refiner model instead of the base model.
    pub sdxl_compose: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            compose_steps: 75,
            compose_guidance: 15.0,
            compose_strength: 1.0,
            refine_inference_steps: 50,
            refine_noise_steps: 10,
            refine_guidance: 7.5,
            colorize_steps: 30,
            colorize_strength: 0.91,
            colorize_guidance: 17.0,
            upscale_factor: 4,
            colorize_upscale_max_side: 256,
            colorize: ColorizeMode::Auto,
            saturation_threshold: 0.08,
            variants_k: 1,
            seed: 0,
            mask_threshold: DEFAULT_MASK_THRESHOLD,
            mask_coverage: 0.5,
            update_mode: UpdateMode::Scheduler,
            refine: true,
            refine_in_latent: false,
            sdxl_compose: false,
        }
    }
}

pub const MAX_VARIANTS: usize = 8;

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(PipelineError::param(m));
        if self.refine_noise_steps > self.refine_inference_steps {
            return fail(format!(
                "refine_noise_steps {} exceeds refine_inference_steps {}",
                self.refine_noise_steps, self.refine_inference_steps
            ));
        }
        for (name, g) in [
            ("compose_guidance", self.compose_guidance),
            ("refine_guidance", self.refine_guidance),
            ("colorize_guidance", self.colorize_guidance),
        ] {
            if !(g >= 0.0 && g.is_finite()) {
                return fail(format!("{name} must be a finite value ≥ 0, got {g}"));
            }
        }
        for (name, s) in [
            ("compose_strength", self.compose_strength),
            ("colorize_strength", self.colorize_strength),
        ] {
            if !(0.0..=1.0).contains(&s) {
                return fail(format!("{name} must lie in [0, 1], got {s}"));
            }
        }
        if !(1..=MAX_VARIANTS).contains(&self.variants_k) {
            return fail(format!("variants_k must lie in 1..={MAX_VARIANTS}, got {}", self.variants_k));
        }
        if self.upscale_factor == 0 {
            return fail("upscale_factor must be ≥ 1".into());
        }
        if !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return fail(format!("mask_threshold must lie in (0, 1), got {}", self.mask_threshold));
        }
        if !(self.mask_coverage > 0.0 && self.mask_coverage <= 1.0) {
            return fail(format!("mask_coverage must lie in (0, 1], got {}", self.mask_coverage));
        }
        if !(0.0..=1.0).contains(&self.saturation_threshold) {
            return fail(format!("saturation_threshold must lie in [0, 1], got {}", self.saturation_threshold));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::param(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_published_constants() {
        let c = PipelineConfig::default();
        assert_eq!(c.compose_steps, 75);
        assert_eq!(c.compose_guidance, 15.0);
        assert_eq!(c.refine_inference_steps, 50);
        assert_eq!(c.refine_noise_steps, 10);
        assert_eq!(c.refine_guidance, 7.5);
        assert_eq!(c.colorize_steps, 30);
        assert_eq!(c.colorize_strength, 0.91);
        assert_eq!(c.colorize_guidance, 17.0);
        assert_eq!(c.upscale_factor, 4);
        assert_eq!(c.variants_k, 1);
        c.validate().unwrap();
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let c = PipelineConfig::from_toml_str("seed = 9\nrefine = false\n").unwrap();
        assert_eq!(c.seed, 9);
        assert!(!c.refine);
        assert_eq!(c.compose_steps, 75);
        let back = PipelineConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let bad = [
            PipelineConfig { refine_noise_steps: 51, ..Default::default() },
            PipelineConfig { refine_guidance: -1.0, ..Default::default() },
            PipelineConfig { variants_k: 0, ..Default::default() },
            PipelineConfig { variants_k: 9, ..Default::default() },
            PipelineConfig { colorize_strength: 1.5, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert!(PipelineConfig::from_toml_str("compose_stepz = 3\n").is_err());
    }
}
