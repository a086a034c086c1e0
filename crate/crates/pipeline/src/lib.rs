//! Object insertion runs: optional segmentation and colorization, placement,
//! masked latent composition and refinement.
//!
//! Every run writes a directory with `inputs/`, `stages/<n>_<name>/`,
//! `variants/` and a `manifest.json` that is enough to replay it.

pub mod config;
pub mod error;
pub mod imaging;
pub mod manifest;
pub mod pipeline;
pub mod placement;
pub mod prompt;
pub mod replay;
pub mod stages;

pub use config::{ColorizeMode, PipelineConfig, MAX_VARIANTS};
pub use error::{PipelineError, Result, StageContext};
pub use manifest::{FileRecord, OutputRecord, RunDir, RunKind, RunManifest, MANIFEST_FILE};
pub use pipeline::{Chooser, FixedChoices, InsertRequest, Interaction, Pipeline, Prompts, RunOutcome, RunPlan};
pub use placement::{place_object, PlacementSpec, Placed};
pub use prompt::{render_prompt, PromptSpec, RenderedPrompt, TemplateId, TemplateSet};
pub use replay::{replay, rerun, ReplayReport};
