use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::prompt::PromptEmbedding;
use crate::schedule::NoiseSchedule;
use crate::tensor::{LatentRole, LatentTensor};

/// Text-conditioned noise predictor ε_θ.
///
/// Classifier-free guidance is the implementor's business: `guidance_scale`
/// is passed through and the returned prediction is already guided.
pub trait Denoiser {
    /// Identifier recorded in run manifests.
    fn id(&self) -> &str;

    fn predict(
        &self,
        latent: &LatentTensor,
        t: usize,
        prompt: &PromptEmbedding,
        guidance_scale: f32,
    ) -> Result<LatentTensor>;

    /// Update rule used in [`UpdateMode::Scheduler`].
    fn sampler(&self) -> &dyn Sampler {
        &DdimUpdate
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn predict(&self, latent: &LatentTensor, t: usize, prompt: &PromptEmbedding, guidance_scale: f32) -> Result<LatentTensor> {
        (**self).predict(latent, t, prompt, guidance_scale)
    }

    fn sampler(&self) -> &dyn Sampler {
        (**self).sampler()
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn predict(&self, latent: &LatentTensor, t: usize, prompt: &PromptEmbedding, guidance_scale: f32) -> Result<LatentTensor> {
        (**self).predict(latent, t, prompt, guidance_scale)
    }

    fn sampler(&self) -> &dyn Sampler {
        (**self).sampler()
    }
}

/// One denoising update from timestep `t` to `t_prev` (`None` = clean sample).
pub trait Sampler {
    fn name(&self) -> &'static str;

    fn step(
        &self,
        sample: &LatentTensor,
        eps: &LatentTensor,
        t: usize,
        t_prev: Option<usize>,
        schedule: &NoiseSchedule,
    ) -> Result<LatentTensor>;
}

/// `z_{t-1} = z_t − ε`, exactly as the update equations are written.
#[derive(Debug, Clone, Copy, Default)]
pub struct LiteralUpdate;

impl Sampler for LiteralUpdate {
    fn name(&self) -> &'static str {
        "literal"
    }

    fn step(&self, sample: &LatentTensor, eps: &LatentTensor, _t: usize, _t_prev: Option<usize>, _schedule: &NoiseSchedule) -> Result<LatentTensor> {
        Ok(sample.zip_map(eps, |z, e| z - e)?.with_role(LatentRole::Working))
    }
}

/// Deterministic DDIM (η = 0) update for ε-predicting models.
#[derive(Debug, Clone, Copy, Default)]
pub struct DdimUpdate;

impl Sampler for DdimUpdate {
    fn name(&self) -> &'static str {
        "ddim"
    }

    fn step(&self, sample: &LatentTensor, eps: &LatentTensor, t: usize, t_prev: Option<usize>, schedule: &NoiseSchedule) -> Result<LatentTensor> {
        schedule.check_timestep(t)?;
        let ab_t = schedule.alpha_bar(t);
        let ab_prev = match t_prev {
            Some(tp) => {
                schedule.check_timestep(tp)?;
                schedule.alpha_bar(tp)
            }
            None => 1.0,
        };
        if ab_t <= 0.0 {
            return Err(CoreError::param(format!("alpha_bar at t={t} is zero")));
        }
        let (s_t, n_t) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
        let (s_p, n_p) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
        Ok(sample
            .zip_map(eps, |z, e| {
                let x0 = (z as f64 - n_t * e as f64) / s_t;
                (s_p * x0 + n_p * e as f64) as f32
            })?
            .with_role(LatentRole::Working))
    }
}

/// Which update the background region receives each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// Raw `z − ε` subtraction.
    Literal,
    /// Delegate to the denoiser's own sampler.
    #[default]
    Scheduler,
}

impl UpdateMode {
    pub fn resolve<'a>(self, denoiser: &'a dyn Denoiser) -> &'a dyn Sampler {
        match self {
            UpdateMode::Literal => &LiteralUpdate,
            UpdateMode::Scheduler => denoiser.sampler(),
        }
    }
}
