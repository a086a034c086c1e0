//! Scoring method outputs against a benchmark manifest.
//!
//! A method's outputs live in one directory, per sample either
//! `<id>.png` (optionally with a `<id>.json` bounding-box sidecar) or a run
//! directory `<id>/` holding `final.png` and `final.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use image::{DynamicImage, RgbImage};
use insertkit_pipeline::manifest::BoundingBox;
use insertkit_pipeline::placement::white_canvas;
use insertkit_pipeline::{place_object, Placed, InsertRequest, Interaction, Pipeline, PipelineConfig, TemplateSet};
use serde::{Deserialize, Serialize};

use crate::benchmark::{BenchmarkManifest, BenchmarkSample};
use crate::clip::clip_score;
use crate::error::{EvalError, Result, SampleError};
use crate::perceptual::{perceptual_distance, ResizePolicy};
use crate::scorers::Scorers;

/// Region compared by the perceptual metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpipsMode {
    #[default]
    Full,
    /// The object's bounding box only.
    Crop,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub method: String,
    pub lpips_mode: LpipsMode,
    pub resize: ResizePolicy,
    pub mask_threshold: f32,
    pub templates: TemplateSet,
}

impl EvalOptions {
    pub fn new(method: &str) -> Self {
        Self {
            method: method.to_string(),
            lpips_mode: LpipsMode::Full,
            resize: ResizePolicy::Reject,
            mask_threshold: insertkit_pipeline::PipelineConfig::default().mask_threshold,
            templates: TemplateSet::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub category: String,
    pub method: String,
    pub clip: f64,
    pub hpsv2: f64,
    pub lpips: f64,
    /// Output image scored, relative to the outputs directory.
    pub artifact: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<(usize, usize, usize, usize)>,
    #[serde(default)]
    pub resized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub category: String,
    pub n: usize,
    pub clip: f64,
    pub hpsv2: f64,
    pub lpips: f64,
}

/// Plain means of the records, in record order.
pub fn aggregate(category: &str, records: &[&EvalRecord]) -> Option<Aggregate> {
    if records.is_empty() {
        return None;
    }
    let n = records.len() as f64;
    let mean = |f: fn(&EvalRecord) -> f64| records.iter().map(|r| f(r)).sum::<f64>() / n;
    Some(Aggregate {
        category: category.to_string(),
        n: records.len(),
        clip: mean(|r| r.clip),
        hpsv2: mean(|r| r.hpsv2),
        lpips: mean(|r| r.lpips),
    })
}

pub const OVERALL: &str = "overall";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub lpips_mode: LpipsMode,
    pub resize: ResizePolicy,
    /// What the perceptual metric compares against.
    pub reference: String,
    pub scorers: BTreeMap<String, String>,
    pub records: Vec<EvalRecord>,
    pub categories: Vec<Aggregate>,
    pub overall: Option<Aggregate>,
    /// Manifest samples without an output.
    pub missing: Vec<String>,
    /// Outputs that match no manifest sample.
    pub unexpected: Vec<String>,
    pub errors: Vec<SampleError>,
}

impl EvalReport {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty() && self.unexpected.is_empty() && self.errors.is_empty()
    }

    fn aggregate_all(&mut self) {
        let mut by_cat: BTreeMap<&str, Vec<&EvalRecord>> = BTreeMap::new();
        for r in &self.records {
            by_cat.entry(r.category.as_str()).or_default().push(r);
        }
        self.categories = by_cat.iter().filter_map(|(c, rs)| aggregate(c, rs)).collect();
        self.overall = aggregate(OVERALL, &self.records.iter().collect::<Vec<_>>());
    }

    /// Writes `records.jsonl`, `summary.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut lines = String::new();
        for r in &self.records {
            lines.push_str(&serde_json::to_string(r).expect("record serializes"));
            lines.push('\n');
        }
        std::fs::write(dir.join("records.jsonl"), lines)?;
        write_table(&dir.join("summary.csv"), std::slice::from_ref(self))?;
        std::fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(self).expect("report serializes"),
        )?;
        Ok(())
    }
}

/// CSV with one row per category and method, overall last: `category,
/// method, n, clip, hpsv2, lpips`.
pub fn write_table(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["category", "method", "n", "clip", "hpsv2", "lpips"])?;
    let mut categories: Vec<&str> = reports
        .iter()
        .flat_map(|r| r.categories.iter().map(|a| a.category.as_str()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    categories.push(OVERALL);
    for cat in categories {
        for rep in reports {
            let agg = if cat == OVERALL {
                rep.overall.as_ref()
            } else {
                rep.categories.iter().find(|a| a.category == cat)
            };
            if let Some(a) = agg {
                w.write_record([
                    cat.to_string(),
                    rep.method.clone(),
                    a.n.to_string(),
                    format!("{:.3}", a.clip),
                    format!("{:.3}", a.hpsv2),
                    format!("{:.3}", a.lpips),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputRef {
    pub image: PathBuf,
    /// Relative to the outputs directory.
    pub rel: String,
    pub bbox: Option<BoundingBox>,
}

#[derive(Deserialize)]
struct Sidecar {
    bbox: Option<BoundingBox>,
}

fn sidecar(path: &Path) -> Result<Option<BoundingBox>> {
    if !path.is_file() {
        return Ok(None);
    }
    let s: Sidecar = serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| EvalError::format(path, e))?;
    Ok(s.bbox)
}

/// Finds the output of sample `id` under `dir`.
pub fn find_output(dir: &Path, id: &str) -> Result<Option<OutputRef>> {
    for (rel, side) in [
        (format!("{id}.png"), format!("{id}.json")),
        (format!("{id}.jpg"), format!("{id}.json")),
        (format!("{id}/final.png"), format!("{id}/final.json")),
    ] {
        let image = dir.join(&rel);
        if image.is_file() {
            return Ok(Some(OutputRef {
                bbox: sidecar(&dir.join(side))?,
                image,
                rel,
            }));
        }
    }
    Ok(None)
}

fn output_ids(dir: &Path) -> Result<BTreeSet<String>> {
    let mut ids = BTreeSet::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().to_string();
        if name.starts_with('.') {
            continue;
        }
        if path.is_dir() {
            if path.join("final.png").is_file() {
                ids.insert(name);
            }
        } else if let Some(stem) = name.strip_suffix(".png").or_else(|| name.strip_suffix(".jpg")) {
            ids.insert(stem.to_string());
        }
    }
    Ok(ids)
}

/// Reference composition of a sample: the object pasted at its placement on
/// the background (or on white for the generated task), with its mask.
pub fn reference(manifest: &BenchmarkManifest, sample: &BenchmarkSample, threshold: f32) -> Result<Placed> {
    let object = image::open(manifest.resolve(&sample.object))?;
    let canvas = match &sample.background {
        Some(bg) => image::open(manifest.resolve(bg))?.to_rgb8(),
        None => white_canvas(sample.placement.canvas_size),
    };
    Ok(place_object(&object, &canvas, &sample.placement, threshold)?)
}

fn crop(image: &RgbImage, (x0, y0, x1, y1): BoundingBox) -> RgbImage {
    image::imageops::crop_imm(image, x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32).to_image()
}

fn score_sample(
    manifest: &BenchmarkManifest,
    sample: &BenchmarkSample,
    output: &OutputRef,
    scorers: &Scorers,
    opts: &EvalOptions,
) -> Result<EvalRecord> {
    let image = image::open(&output.image)?.to_rgb8();
    let placed = reference(manifest, sample, opts.mask_threshold)?;
    let reference = &placed.image;
    if image.dimensions() != reference.dimensions() && opts.resize == ResizePolicy::Reject {
        return Err(EvalError::param(format!(
            "output is {:?}, reference is {:?}",
            image.dimensions(),
            reference.dimensions()
        )));
    }
    let prompt = opts.templates.render(&sample.prompt)?;
    let clip = clip_score(scorers.clip.as_ref(), &image, &prompt)?;
    let hpsv2 = scorers.preference.score(&image, &prompt)?;
    let (lpips, resized, bbox) = match opts.lpips_mode {
        LpipsMode::Full => {
            let (d, resized) = perceptual_distance(scorers.perceptual.as_ref(), reference, &image, opts.resize)?;
            (d, resized, None)
        }
        LpipsMode::Crop => {
            let bbox = output
                .bbox
                .or_else(|| placed.mask.bounding_box())
                .ok_or_else(|| EvalError::param("no bounding box for crop mode"))?;
            let out = if image.dimensions() == reference.dimensions() {
                image.clone()
            } else {
                image::imageops::resize(&image, reference.width(), reference.height(), image::imageops::FilterType::Triangle)
            };
            let (d, _) = perceptual_distance(
                scorers.perceptual.as_ref(),
                &crop(reference, bbox),
                &crop(&out, bbox),
                ResizePolicy::Reject,
            )?;
            (d, image.dimensions() != reference.dimensions(), Some(bbox))
        }
    };
    Ok(EvalRecord {
        sample_id: sample.id.clone(),
        category: sample.category.clone(),
        method: opts.method.clone(),
        clip,
        hpsv2,
        lpips,
        artifact: output.rel.clone(),
        bbox,
        resized,
    })
}

/// Scores every manifest sample's output in `outputs`. Missing and
/// unexpected outputs and per-sample failures are listed in the report.
pub fn run_eval(manifest: &BenchmarkManifest, outputs: &Path, scorers: &Scorers, opts: &EvalOptions) -> Result<EvalReport> {
    if !outputs.is_dir() {
        return Err(EvalError::MissingInputs(vec![outputs.to_path_buf()]));
    }
    let mut report = EvalReport {
        method: opts.method.clone(),
        lpips_mode: opts.lpips_mode,
        resize: opts.resize,
        reference: "object pasted at its placement on the background, or on white for generated backgrounds".into(),
        scorers: scorers.ids(),
        records: Vec::new(),
        categories: Vec::new(),
        overall: None,
        missing: Vec::new(),
        unexpected: Vec::new(),
        errors: Vec::new(),
    };
    let known: BTreeSet<&str> = manifest.samples.iter().map(|s| s.id.as_str()).collect();
    report.unexpected = output_ids(outputs)?
        .into_iter()
        .filter(|id| !known.contains(id.as_str()))
        .collect();
    for sample in &manifest.samples {
        let found = match find_output(outputs, &sample.id) {
            Ok(f) => f,
            Err(e) => {
                report.errors.push(SampleError {
                    sample_id: sample.id.clone(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let Some(output) = found else {
            report.missing.push(sample.id.clone());
            continue;
        };
        match score_sample(manifest, sample, &output, scorers, opts) {
            Ok(r) => report.records.push(r),
            Err(e) => report.errors.push(SampleError {
                sample_id: sample.id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    report.aggregate_all();
    Ok(report)
}

/// Runs the insertion pipeline on every sample, one run directory per
/// sample under `out`. Samples whose run directory already exists are
/// skipped.
pub fn generate_outputs(
    manifest: &BenchmarkManifest,
    pipeline: &Pipeline,
    cfg: &PipelineConfig,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let mut dirs = Vec::new();
    let mut errors = Vec::new();
    for sample in &manifest.samples {
        let dir = out.join(&sample.id);
        if dir.join("final.png").is_file() {
            dirs.push(dir);
            continue;
        }
        let run = || -> Result<PathBuf> {
            let object: DynamicImage = image::open(manifest.resolve(&sample.object))?;
            let background = sample
                .background
                .as_ref()
                .map(|b| image::open(manifest.resolve(b)).map(|i| i.to_rgb8()))
                .transpose()?;
            let req = InsertRequest {
                object,
                background,
                placement: sample.placement,
                prompt: sample.prompt.clone(),
                segment_category: None,
            };
            Ok(pipeline.insert(&req, cfg, Interaction::Batch, &dir)?.dir)
        };
        match run() {
            Ok(d) => dirs.push(d),
            Err(e) => errors.push(SampleError {
                sample_id: sample.id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    if errors.is_empty() {
        Ok(dirs)
    } else {
        Err(EvalError::Samples(errors))
    }
}
