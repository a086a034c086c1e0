use std::net::SocketAddr;
use std::path::PathBuf;

use insertkit_pipeline::{PipelineConfig, TemplateSet};

pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 32 * 1024 * 1024;

/// Canvas sides must be multiples of this so the latent grid lines up.
pub const CANVAS_MULTIPLE: u32 = 8;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    /// Sessions, assets, variants and job tickets live here.
    pub data_dir: PathBuf,
    pub max_upload_bytes: usize,
    /// Each worker owns one adapter set.
    pub workers: usize,
    /// Starting config of new sessions.
    pub pipeline: PipelineConfig,
    pub templates: TemplateSet,
}

impl ServerConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: data_dir.into(),
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
            workers: 1,
            pipeline: PipelineConfig::default(),
            templates: TemplateSet::default(),
        }
    }
}
