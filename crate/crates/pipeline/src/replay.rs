//! Re-running a finished run from its manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use insertkit_adapters::AdapterSet;

use crate::error::{PipelineError, Result};
use crate::imaging::{load_image, sha256_hex};
use crate::manifest::{RunKind, RunManifest, MANIFEST_FILE};
use crate::pipeline::{FixedChoices, InsertRequest, Interaction, Pipeline, Prompts, RunOutcome, RunPlan};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    pub path: String,
    pub recorded: String,
    /// `None` when the replay did not produce the file.
    pub replayed: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ReplayReport {
    pub original: PathBuf,
    pub replay_dir: PathBuf,
    pub compared: usize,
    pub divergences: Vec<Divergence>,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.divergences.is_empty()
    }
}

/// Accepts the run directory or its manifest file.
pub fn locate_run(path: &Path) -> Result<(PathBuf, RunManifest)> {
    let (dir, file) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_FILE))
    } else {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        (dir, path.to_path_buf())
    };
    Ok((dir, RunManifest::load(&file)?))
}

fn verified_input(dir: &Path, manifest: &RunManifest, key: &str) -> Result<Option<PathBuf>> {
    let Some(rec) = manifest.inputs.get(key) else {
        return Ok(None);
    };
    let path = dir.join(&rec.path);
    let bytes = std::fs::read(&path)?;
    if sha256_hex(&bytes) != rec.sha256 {
        return Err(PipelineError::ReplayMismatch(format!(
            "input {} does not match its recorded digest",
            rec.path
        )));
    }
    Ok(Some(path))
}

fn required(path: Option<PathBuf>, key: &str) -> Result<PathBuf> {
    path.ok_or_else(|| PipelineError::Manifest(format!("manifest lists no `{key}` input")))
}

/// Re-executes the run recorded at `run` with `adapters`, writing into `out`.
pub fn rerun(run: &Path, adapters: AdapterSet, out: &Path) -> Result<(RunManifest, RunOutcome)> {
    let (dir, manifest) = locate_run(run)?;
    let pipeline = Pipeline::new(adapters);
    let prompts = Prompts(manifest.prompts.clone());
    let cfg = &manifest.config;
    let outcome = match manifest.kind {
        RunKind::Insert | RunKind::InsertGenerated => {
            let object = load_image(&required(verified_input(&dir, &manifest, "object")?, "object")?)?;
            let background = match verified_input(&dir, &manifest, "background")? {
                Some(p) => Some(load_image(&p)?.to_rgb8()),
                None => None,
            };
            if (manifest.kind == RunKind::Insert) != background.is_some() {
                return Err(PipelineError::Manifest("run kind and background input disagree".into()));
            }
            let req = InsertRequest {
                object,
                background,
                placement: manifest
                    .placement
                    .ok_or_else(|| PipelineError::Manifest("insert run without placement".into()))?,
                prompt: manifest
                    .prompt
                    .clone()
                    .ok_or_else(|| PipelineError::Manifest("insert run without prompt spec".into()))?,
                segment_category: manifest.category.clone(),
            };
            let mut choices = FixedChoices(manifest.selections.clone());
            let interaction = if manifest.interactive {
                Interaction::Interactive(&mut choices)
            } else {
                Interaction::Batch
            };
            pipeline.insert_planned(&req, &prompts, cfg, interaction, &RunPlan::from_manifest(&manifest), out)?
        }
        RunKind::GenerateBackground => {
            let size = manifest
                .size
                .ok_or_else(|| PipelineError::Manifest("background run without size".into()))?;
            pipeline.generate_background_with_prompts(&prompts, size, cfg, out)?
        }
        RunKind::Colorize => {
            let object = load_image(&required(verified_input(&dir, &manifest, "object")?, "object")?)?;
            pipeline.colorize_with_prompts(&object, &prompts, cfg, out)?
        }
        RunKind::Segment => {
            let image = load_image(&required(verified_input(&dir, &manifest, "image")?, "image")?)?;
            let category = manifest
                .category
                .clone()
                .ok_or_else(|| PipelineError::Manifest("segment run without category".into()))?;
            pipeline.segment(&image.to_rgb8(), &category, cfg, out)?
        }
    };
    Ok((manifest, outcome))
}

/// Replays and compares every recorded output digest.
pub fn replay(run: &Path, adapters: AdapterSet, out: &Path) -> Result<ReplayReport> {
    let (dir, _) = locate_run(run)?;
    let (original, outcome) = rerun(run, adapters, out)?;
    let replayed: BTreeMap<&str, &str> = outcome
        .manifest
        .all_outputs()
        .into_iter()
        .map(|f| (f.path.as_str(), f.sha256.as_str()))
        .collect();
    let mut divergences = Vec::new();
    let recorded = original.all_outputs();
    for rec in &recorded {
        match replayed.get(rec.path.as_str()) {
            Some(&d) if d == rec.sha256 => {}
            other => divergences.push(Divergence {
                path: rec.path.clone(),
                recorded: rec.sha256.clone(),
                replayed: other.map(|d| d.to_string()),
            }),
        }
    }
    Ok(ReplayReport {
        original: dir,
        replay_dir: outcome.dir,
        compared: recorded.len(),
        divergences,
    })
}
