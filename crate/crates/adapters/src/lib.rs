//! Uniform interfaces to the pretrained models the pipeline uses.
//!
//! Each role (latent codec, denoiser, text encoder, upscaler, segmenter,
//! background generator) is a trait. Every trait has a deterministic toy
//! implementation in [`toy`] that needs no weights, and the `candle` feature
//! adds SD-2.1 / SDXL backends loaded from the model cache.

pub mod classical;
pub mod error;
pub mod fetch;
pub mod pixels;
pub mod registry;
pub mod set;
pub mod toy;
pub mod traits;

#[cfg(feature = "candle")]
pub mod candle_backend;

pub use error::{AdapterError, Result};
pub use fetch::{fetch_models, FetchReport, DEFAULT_ENDPOINT, ENDPOINT_ENV};
pub use registry::{ModelEntry, ModelRegistry, ModelRole, ResolvedModel, CACHE_ENV};
pub use set::{AdapterSet, DiffusionStack, SharedDenoiser, TOY_PRIOR_SIGMA};
pub use traits::{
    segment_with_fallback, BackgroundGenerator, EncodedPrompt, LatentCodec, Segmentation, Segmenter,
    TextEncoder, Upscaler,
};
