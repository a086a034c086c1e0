//! Evaluation harness: benchmark manifests, CLIP / preference / perceptual
//! scores, per-category report tables and blind human-study bundles.

pub mod benchmark;
pub mod clip;
pub mod demo;
pub mod error;
mod features;
pub mod perceptual;
pub mod preference;
pub mod probes;
pub mod report;
pub mod scorers;
pub mod study;

pub use benchmark::{assemble_benchmark, assemble_from, BenchmarkManifest, BenchmarkSample, SourcesConfig, Task};
pub use clip::{clip_score, ClipModel, ToyClip};
pub use error::{EvalError, Result, SampleError};
pub use features::{corrupt, cosine_score};
pub use perceptual::{perceptual_distance, FilterBankMetric, PerceptualMetric, ResizePolicy};
pub use preference::{PreferenceModel, ToyPreference};
pub use report::{generate_outputs, run_eval, write_table, Aggregate, EvalOptions, EvalRecord, EvalReport, LpipsMode};
pub use scorers::Scorers;
pub use study::{build_human_study_bundle, StudyKey, StudyMethod, StudyOptions};
