//! Model-free core of the insertion toolkit.
//!
//! Everything here operates on latent tensors and binary masks and is
//! parameterized by an abstract [`Denoiser`], so the full masked-diffusion
//! loop can be exercised without pretrained weights.
//!
//! The pieces, bottom-up:
//!
//! - [`NoiseSchedule`] holds β, α and the cumulative ᾱ products.
//! - [`TimestepPlan`] maps inference indices onto training timesteps.
//! - [`BinaryMask`] is created from an object-on-white image by thresholding
//!   and downsampled to latent resolution by block coverage.
//! - [`compositor`] implements the pasted composition, forward noising, the
//!   masked per-step update and the unmasked refinement pass.

pub mod compositor;
pub mod denoiser;
pub mod error;
pub mod mask;
pub mod noise;
pub mod plan;
pub mod prompt;
pub mod schedule;
pub mod tensor;

pub use compositor::{
    forward_noise, masked_step, paste_compose, refine, refine_traced, run_masked_diffusion,
    run_masked_diffusion_traced, DiffusionContext, StepTrace,
};
pub use denoiser::{DdimUpdate, Denoiser, LiteralUpdate, Sampler, UpdateMode};
pub use error::{CoreError, Result};
pub use mask::{make_mask, BinaryMask, MaskOutcome, MaskResolution, DEFAULT_MASK_THRESHOLD};
pub use noise::{NoiseSource, RandomSource, ZeroNoise};
pub use plan::TimestepPlan;
pub use prompt::PromptEmbedding;
pub use schedule::{NoiseSchedule, ScheduleKind};
pub use tensor::{LatentRole, LatentTensor};
