use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::DynamicImage;
use insertkit_adapters::ModelRegistry;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};
use crate::imaging::{encode_png, sha256_hex};
use crate::placement::PlacementSpec;
use crate::prompt::{PromptSpec, RenderedPrompt};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    /// Insertion into a given background.
    Insert,
    /// Insertion with the background synthesised from noise.
    InsertGenerated,
    GenerateBackground,
    Colorize,
    Segment,
}

/// A file inside the run directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Path relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub stage: String,
    pub variant: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub dir: String,
    pub seconds: f64,
    pub candidates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<usize>,
    pub outputs: Vec<FileRecord>,
}

/// Object bounding box `(x0, y0, x1, y1)`, exclusive on the far side.
pub type BoundingBox = (usize, usize, usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub file: FileRecord,
    pub variant: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub tool_version: String,
    pub kind: RunKind,
    #[serde(default)]
    pub interactive: bool,
    pub config: PipelineConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<PromptSpec>,
    /// Rendered prompt per use (`insertion`, `colorization`, `background`).
    #[serde(default)]
    pub prompts: BTreeMap<String, RenderedPrompt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<PlacementSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<(u32, u32)>,
    pub registry: ModelRegistry,
    pub models: BTreeMap<String, String>,
    pub seeds: Vec<SeedRecord>,
    /// Chosen candidate per interactive stage.
    #[serde(default)]
    pub selections: BTreeMap<String, usize>,
    pub inputs: BTreeMap<String, FileRecord>,
    pub stages: Vec<StageRecord>,
    pub outputs: Vec<OutputRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_output: Option<OutputRecord>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn new(kind: RunKind, config: PipelineConfig, registry: ModelRegistry, models: BTreeMap<String, String>) -> Self {
        Self {
            format_version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            kind,
            interactive: false,
            config,
            prompt: None,
            prompts: BTreeMap::new(),
            placement: None,
            category: None,
            size: None,
            registry,
            models,
            seeds: Vec::new(),
            selections: BTreeMap::new(),
            inputs: BTreeMap::new(),
            stages: Vec::new(),
            outputs: Vec::new(),
            final_output: None,
            warnings: Vec::new(),
        }
    }

    pub fn seed(&mut self, stage: &str, variant: usize, seed: u64) -> u64 {
        self.seeds.push(SeedRecord {
            stage: stage.to_string(),
            variant,
            seed,
        });
        seed
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| PipelineError::Manifest(e.to_string()))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(PipelineError::Manifest(format!(
                "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                m.format_version
            )));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Every output file recorded anywhere in the manifest.
    pub fn all_outputs(&self) -> Vec<&FileRecord> {
        let mut files: Vec<&FileRecord> = self.stages.iter().flat_map(|s| s.outputs.iter()).collect();
        files.extend(self.outputs.iter().map(|o| &o.file));
        files.extend(self.final_output.iter().map(|o| &o.file));
        files
    }
}

/// Run directory written under a hidden staging path and renamed into place
/// by [`RunDir::finalize`]. Dropping an unfinalized run removes the staging
/// directory, so failed runs leave nothing behind.
#[derive(Debug)]
pub struct RunDir {
    target: PathBuf,
    staging: PathBuf,
    finalized: bool,
}

impl RunDir {
    pub fn create(target: &Path) -> Result<Self> {
        if target.exists() {
            let empty = target.is_dir() && std::fs::read_dir(target)?.next().is_none();
            if !empty {
                return Err(PipelineError::param(format!(
                    "output directory {} already exists and is not empty",
                    target.display()
                )));
            }
        }
        let name = target
            .file_name()
            .ok_or_else(|| PipelineError::param(format!("invalid output path {}", target.display())))?
            .to_string_lossy()
            .to_string();
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&parent)?;
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.subsec_nanos())
            .unwrap_or(0);
        let staging = parent.join(format!(".{name}.staging-{}-{nanos}", std::process::id()));
        std::fs::create_dir_all(&staging)?;
        Ok(Self {
            target: target.to_path_buf(),
            staging,
            finalized: false,
        })
    }

    pub fn root(&self) -> &Path {
        &self.staging
    }

    pub fn target(&self) -> &Path {
        &self.target
    }

    fn prepare(&self, rel: &str) -> Result<PathBuf> {
        let path = self.staging.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(path)
    }

    pub fn write_bytes(&self, rel: &str, bytes: &[u8]) -> Result<FileRecord> {
        std::fs::write(self.prepare(rel)?, bytes)?;
        Ok(FileRecord {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
        })
    }

    pub fn write_image(&self, rel: &str, image: &DynamicImage) -> Result<FileRecord> {
        self.write_bytes(rel, &encode_png(image)?)
    }

    pub fn write_rgb(&self, rel: &str, image: &image::RgbImage) -> Result<FileRecord> {
        self.write_image(rel, &DynamicImage::ImageRgb8(image.clone()))
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<FileRecord> {
        let text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Manifest(e.to_string()))?;
        self.write_bytes(rel, text.as_bytes())
    }

    /// Writes the manifest and moves the run into place.
    pub fn finalize(mut self, manifest: &RunManifest) -> Result<PathBuf> {
        std::fs::write(self.staging.join(MANIFEST_FILE), manifest.to_json())?;
        if self.target.exists() {
            std::fs::remove_dir(&self.target)?;
        }
        std::fs::rename(&self.staging, &self.target)?;
        self.finalized = true;
        Ok(self.target.clone())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if !self.finalized {
            let _ = std::fs::remove_dir_all(&self.staging);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> RunManifest {
        RunManifest::new(RunKind::Insert, PipelineConfig::default(), ModelRegistry::toy(), BTreeMap::new())
    }

    #[test]
    fn manifest_json_round_trip() {
        let mut m = manifest();
        m.seed("compose", 0, 42);
        m.selections.insert("compose".into(), 2);
        m.placement = Some(PlacementSpec::new(1, 2, 0.5, (64, 64)));
        assert_eq!(RunManifest::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn unfinalized_run_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("run");
        {
            let run = RunDir::create(&target).unwrap();
            run.write_bytes("stages/01_x/a.txt", b"hi").unwrap();
        }
        assert!(!target.exists());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn finalized_run_moves_into_place() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("run");
        let run = RunDir::create(&target).unwrap();
        let rec = run.write_bytes("inputs/a.txt", b"abc").unwrap();
        assert_eq!(rec.sha256, sha256_hex(b"abc"));
        run.finalize(&manifest()).unwrap();
        assert_eq!(std::fs::read(target.join("inputs/a.txt")).unwrap(), b"abc");
        assert!(target.join(MANIFEST_FILE).is_file());
        assert!(RunDir::create(&target).is_err());
    }
}
