//! Masked latent compositing.
//!
//! Draw order is part of the reproducibility contract. [`forward_noise`]
//! consumes one draw of the tensor's length. [`masked_step`] calls the
//! denoiser first and then draws once to re-noise the object, except on the
//! final step where the clean object is injected without a draw.
//! [`run_masked_diffusion`] draws once for its initial state (the forward
//! noise of the pasted composition, or the pure Gaussian start) before the
//! first step.

use crate::denoiser::{Denoiser, UpdateMode};
use crate::error::{CoreError, Result};
use crate::mask::{BinaryMask, MaskResolution};
use crate::noise::NoiseSource;
use crate::plan::TimestepPlan;
use crate::prompt::PromptEmbedding;
use crate::schedule::NoiseSchedule;
use crate::tensor::{LatentRole, LatentTensor};

/// Everything a denoising step needs besides the state itself.
#[derive(Clone, Copy)]
pub struct DiffusionContext<'a> {
    pub denoiser: &'a dyn Denoiser,
    pub prompt: &'a PromptEmbedding,
    pub guidance_scale: f32,
    pub schedule: &'a NoiseSchedule,
    pub mode: UpdateMode,
}

/// Loop state reported to an observer.
#[derive(Debug)]
pub struct StepTrace<'s> {
    /// 0 for the initial state, `k` after the k-th step.
    pub index: usize,
    /// Timestep the state sits at, `None` once fully denoised.
    pub timestep: Option<usize>,
    pub state: &'s LatentTensor,
}

fn check_mask(latent: &LatentTensor, m: &BinaryMask) -> Result<()> {
    if m.resolution() != MaskResolution::Latent {
        return Err(CoreError::param("compositing needs a latent-resolution mask"));
    }
    if (m.height(), m.width()) != (latent.height(), latent.width()) {
        return Err(CoreError::param(format!(
            "mask {}x{} does not match latent {}x{}",
            m.height(),
            m.width(),
            latent.height(),
            latent.width()
        )));
    }
    Ok(())
}

/// Takes `inside` where the mask is set and `outside` elsewhere, for every channel.
fn select(m: &BinaryMask, inside: &LatentTensor, outside: &LatentTensor, role: LatentRole) -> Result<LatentTensor> {
    inside.ensure_same_shape(outside)?;
    check_mask(inside, m)?;
    let (c, h, w) = inside.shape();
    let plane = h * w;
    let bits = m.as_slice();
    let data = (0..c * plane)
        .map(|i| {
            if bits[i % plane] == 1 {
                inside.as_slice()[i]
            } else {
                outside.as_slice()[i]
            }
        })
        .collect();
    LatentTensor::from_vec(c, h, w, data, role)
}

/// `m ⊙ obj + (1 − m) ⊙ bg`.
pub fn paste_compose(obj: &LatentTensor, bg: &LatentTensor, m: &BinaryMask) -> Result<LatentTensor> {
    select(m, obj, bg, LatentRole::Pasted)
}

/// `√ᾱ_t · x0 + √(1 − ᾱ_t) · ε` with ε drawn from `rng`.
pub fn forward_noise(
    x0: &LatentTensor,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut dyn NoiseSource,
) -> Result<LatentTensor> {
    schedule.check_timestep(t)?;
    let signal = schedule.signal_level(t);
    let noise = schedule.noise_level(t);
    let eps = rng.draw_gaussian(x0.len());
    let data = x0
        .as_slice()
        .iter()
        .zip(eps)
        .map(|(&x, e)| (signal * x as f64 + noise * e as f64) as f32)
        .collect();
    let (c, h, w) = x0.shape();
    LatentTensor::from_vec(c, h, w, data, LatentRole::Working)
}

fn noise_to(x0: &LatentTensor, t: Option<usize>, schedule: &NoiseSchedule, rng: &mut dyn NoiseSource) -> Result<LatentTensor> {
    match t {
        Some(t) => forward_noise(x0, t, schedule, rng),
        None => Ok(x0.clone()),
    }
}

fn predict_checked(ctx: &DiffusionContext<'_>, state: &LatentTensor, t: usize) -> Result<LatentTensor> {
    let eps = ctx.denoiser.predict(state, t, ctx.prompt, ctx.guidance_scale)?;
    if eps.shape() != state.shape() {
        return Err(CoreError::adapter(
            ctx.denoiser.id(),
            format!(
                "prediction shape {:?} differs from input shape {:?}",
                eps.shape(),
                state.shape()
            ),
        ));
    }
    Ok(eps)
}

/// One masked update from `t` to `t_prev`: the background region receives the
/// denoiser's update of `comp_t`, the masked region is replaced by the object
/// noised to `t_prev` (the clean object when `t_prev` is `None`).
pub fn masked_step(
    ctx: &DiffusionContext<'_>,
    comp_t: &LatentTensor,
    obj0: &LatentTensor,
    m: &BinaryMask,
    (t, t_prev): (usize, Option<usize>),
    rng: &mut dyn NoiseSource,
) -> Result<LatentTensor> {
    comp_t.ensure_same_shape(obj0)?;
    check_mask(comp_t, m)?;
    let eps = predict_checked(ctx, comp_t, t)?;
    let updated = ctx.mode.resolve(ctx.denoiser).step(comp_t, &eps, t, t_prev, ctx.schedule)?;
    let obj_prev = noise_to(obj0, t_prev, ctx.schedule, rng)?;
    select(m, &obj_prev, &updated, LatentRole::Working)
}

/// Iterates [`masked_step`] over the active steps of `plan`.
///
/// With a background the start state is the pasted composition noised to the
/// plan's start timestep; without one the plan must start from pure noise and
/// the start state is a standard Gaussian draw. The last step injects the
/// clean object, so `m ⊙ out = m ⊙ obj0`.
pub fn run_masked_diffusion(
    ctx: &DiffusionContext<'_>,
    obj0: &LatentTensor,
    bg: Option<&LatentTensor>,
    m: &BinaryMask,
    plan: &TimestepPlan,
    rng: &mut dyn NoiseSource,
) -> Result<LatentTensor> {
    run_masked_diffusion_traced(ctx, obj0, bg, m, plan, rng, &mut |_| {})
}

pub fn run_masked_diffusion_traced(
    ctx: &DiffusionContext<'_>,
    obj0: &LatentTensor,
    bg: Option<&LatentTensor>,
    m: &BinaryMask,
    plan: &TimestepPlan,
    rng: &mut dyn NoiseSource,
    observer: &mut dyn FnMut(&StepTrace<'_>),
) -> Result<LatentTensor> {
    check_mask(obj0, m)?;
    if plan.train_steps() != ctx.schedule.train_steps() {
        return Err(CoreError::param(format!(
            "plan covers {} training steps, schedule has {}",
            plan.train_steps(),
            ctx.schedule.train_steps()
        )));
    }
    let mut state = match bg {
        Some(bg) => {
            obj0.ensure_same_shape(bg)?;
            let pasted = paste_compose(obj0, bg, m)?;
            match plan.start_timestep() {
                None => return Ok(pasted),
                Some(t) => forward_noise(&pasted, t, ctx.schedule, rng)?,
            }
        }
        None => {
            if !plan.is_from_pure_noise() {
                return Err(CoreError::param(format!(
                    "without a background the run must start from pure noise (start_index {} of {})",
                    plan.start_index(),
                    plan.inference_steps()
                )));
            }
            let (c, h, w) = obj0.shape();
            LatentTensor::from_vec(c, h, w, rng.draw_gaussian(c * h * w), LatentRole::Working)?
        }
    };
    observer(&StepTrace {
        index: 0,
        timestep: plan.start_timestep(),
        state: &state,
    });
    for (i, pair) in plan.step_pairs().into_iter().enumerate() {
        state = masked_step(ctx, &state, obj0, m, pair, rng)?;
        observer(&StepTrace {
            index: i + 1,
            timestep: pair.1,
            state: &state,
        });
    }
    Ok(state.with_role(LatentRole::Composite))
}

/// Noises `comp` to the timestep `noise_steps` before the end of `plan` and
/// denoises it, unmasked, back to a clean sample.
pub fn refine(
    ctx: &DiffusionContext<'_>,
    comp: &LatentTensor,
    noise_steps: usize,
    plan: &TimestepPlan,
    rng: &mut dyn NoiseSource,
) -> Result<LatentTensor> {
    refine_traced(ctx, comp, noise_steps, plan, rng, &mut |_| {})
}

pub fn refine_traced(
    ctx: &DiffusionContext<'_>,
    comp: &LatentTensor,
    noise_steps: usize,
    plan: &TimestepPlan,
    rng: &mut dyn NoiseSource,
    observer: &mut dyn FnMut(&StepTrace<'_>),
) -> Result<LatentTensor> {
    if plan.train_steps() != ctx.schedule.train_steps() {
        return Err(CoreError::param(format!(
            "plan covers {} training steps, schedule has {}",
            plan.train_steps(),
            ctx.schedule.train_steps()
        )));
    }
    let plan = plan.clone().with_start_index(noise_steps)?;
    let Some(t_start) = plan.start_timestep() else {
        return Ok(comp.clone().with_role(LatentRole::Refined));
    };
    let mut state = forward_noise(comp, t_start, ctx.schedule, rng)?;
    observer(&StepTrace {
        index: 0,
        timestep: Some(t_start),
        state: &state,
    });
    let sampler = ctx.mode.resolve(ctx.denoiser);
    for (i, (t, t_prev)) in plan.step_pairs().into_iter().enumerate() {
        let eps = predict_checked(ctx, &state, t)?;
        state = sampler.step(&state, &eps, t, t_prev, ctx.schedule)?;
        observer(&StepTrace {
            index: i + 1,
            timestep: t_prev,
            state: &state,
        });
    }
    Ok(state.with_role(LatentRole::Refined))
}
