//! Benchmark manifests: filtered and seeded samples drawn from local copies
//! of the source datasets.
//!
//! A sources file (TOML) lists one index per category. Indexes are JSON
//! lines, one candidate object per line; all paths are relative to the
//! directory holding the sources file. Sources are never downloaded.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use insertkit_adapters::toy::text_seed;
use insertkit_pipeline::imaging::sha256_hex;
use insertkit_pipeline::{PlacementSpec, PromptSpec, TemplateId};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};

pub const CATEGORIES: [&str; 4] = ["bikes", "cars", "products", "tficon"];
pub const DEFAULT_PER_CATEGORY: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Insert into a given background image.
    #[default]
    Existing,
    /// Insert into a background generated from a prompt.
    Generated,
}

fn default_per_category() -> usize {
    DEFAULT_PER_CATEGORY
}

fn default_canvas() -> (u32, u32) {
    (1024, 1024)
}

fn default_fill() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourcesConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub task: Task,
    #[serde(default = "default_per_category")]
    pub per_category: usize,
    /// Canvas of generated backgrounds.
    #[serde(default = "default_canvas")]
    pub canvas: (u32, u32),
    /// Fraction of the canvas the object's longer side fills when an entry
    /// has no placement.
    #[serde(default = "default_fill")]
    pub object_fill: f64,
    /// Places assigned at random in the generated task.
    #[serde(default)]
    pub background_prompts: Vec<String>,
    #[serde(default, rename = "source")]
    pub sources: Vec<SourceConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub category: String,
    pub index: String,
    /// Background pool (JSON lines of [`BackgroundEntry`]) for entries
    /// without their own background.
    #[serde(default)]
    pub backgrounds: Option<String>,
    /// Draw `per_category` samples at random. Defaults to on, except for
    /// `tficon`, which keeps every sample that passes the filter.
    #[serde(default)]
    pub sample: Option<bool>,
    /// Draw at most one sample per product type.
    #[serde(default)]
    pub distinct_classes: bool,
    /// Entry ids to drop.
    #[serde(default)]
    pub exclude: Vec<String>,
}

impl SourcesConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| EvalError::format("sources", e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::format(path, e))?;
        toml::from_str(&text).map_err(|e| EvalError::format(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntryPlacement {
    pub x: i64,
    pub y: i64,
    pub scale: f64,
}

/// One candidate object in a source index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub id: String,
    pub object: String,
    pub product_type: String,
    pub color: String,
    #[serde(default)]
    pub background: Option<String>,
    #[serde(default)]
    pub place: Option<String>,
    #[serde(default)]
    pub placement: Option<EntryPlacement>,
    /// The background already shows an object of the kind to be inserted.
    #[serde(default)]
    pub object_present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundEntry {
    pub image: String,
    pub place: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    /// Relative to the manifest root.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSample {
    pub id: String,
    pub category: String,
    pub object: FileRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<FileRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_prompt: Option<String>,
    pub placement: PlacementSpec,
    pub prompt: PromptSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub seed: u64,
    pub task: Task,
    pub root: PathBuf,
    pub category_counts: BTreeMap<String, usize>,
    pub provenance: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkManifest {
    pub header: ManifestHeader,
    pub samples: Vec<BenchmarkSample>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Line {
    Header(ManifestHeader),
    Sample(BenchmarkSample),
}

impl BenchmarkManifest {
    /// One header line followed by one line per sample.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&Line::Header(self.header.clone())).expect("header serializes");
        out.push('\n');
        for s in &self.samples {
            out.push_str(&serde_json::to_string(&Line::Sample(s.clone())).expect("sample serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut header = None;
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            match serde_json::from_str(line).map_err(|e| EvalError::format("manifest", format!("line {}: {e}", i + 1)))? {
                Line::Header(h) if header.is_none() => header = Some(h),
                Line::Header(_) => return Err(EvalError::format("manifest", "more than one header line")),
                Line::Sample(s) => samples.push(s),
            }
        }
        let header = header.ok_or_else(|| EvalError::format("manifest", "no header line"))?;
        let m = Self { header, samples };
        let mut ids = BTreeSet::new();
        for s in &m.samples {
            if !ids.insert(&s.id) {
                return Err(EvalError::format("manifest", format!("duplicate sample id `{}`", s.id)));
            }
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_jsonl(&text).map_err(|e| match e {
            EvalError::Format { reason, .. } => EvalError::format(path, reason),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn resolve(&self, file: &FileRef) -> PathBuf {
        self.header.root.join(&file.path)
    }

    pub fn categories(&self) -> Vec<String> {
        self.header.category_counts.keys().cloned().collect()
    }

    /// Checks every referenced file against its digest; lists the absent
    /// ones and fails on the first changed one.
    pub fn verify(&self) -> Result<()> {
        let mut missing = Vec::new();
        for s in &self.samples {
            for f in std::iter::once(&s.object).chain(s.background.as_ref()) {
                let path = self.resolve(f);
                match std::fs::read(&path) {
                    Ok(bytes) if sha256_hex(&bytes) == f.sha256 => {}
                    Ok(_) => return Err(EvalError::format(path, "content differs from the recorded digest")),
                    Err(_) => missing.push(path),
                }
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(EvalError::MissingInputs(missing))
        }
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| EvalError::format(path, format!("line {}: {e}", i + 1))))
        .collect()
}

fn file_ref(root: &Path, rel: &str) -> Result<FileRef> {
    let bytes = std::fs::read(root.join(rel))?;
    Ok(FileRef {
        path: rel.to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Centred placement whose longer side fills `fill` of the canvas.
pub fn fitted_placement(object: (u32, u32), canvas: (u32, u32), fill: f64) -> PlacementSpec {
    let scale = (fill * canvas.0 as f64 / object.0.max(1) as f64).min(fill * canvas.1 as f64 / object.1.max(1) as f64);
    let mut spec = PlacementSpec::new(0, 0, scale, canvas);
    let (w, h) = spec.scaled_dims(object);
    spec.x = (canvas.0 as i64 - w as i64) / 2;
    spec.y = (canvas.1 as i64 - h as i64) / 2;
    spec.clamped(object)
}

struct Pending {
    entry: ObjectEntry,
    background: Option<String>,
    place: String,
}

/// Builds the manifest described by the sources file at `config_path`.
pub fn assemble_benchmark(config_path: &Path) -> Result<BenchmarkManifest> {
    let cfg = SourcesConfig::load(config_path)?;
    let root = config_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let root = std::path::absolute(root)?;
    assemble_from(&cfg, &root)
}

pub fn assemble_from(cfg: &SourcesConfig, root: &Path) -> Result<BenchmarkManifest> {
    if cfg.sources.is_empty() {
        return Err(EvalError::param("sources file lists no sources"));
    }
    if !(cfg.object_fill > 0.0 && cfg.object_fill <= 1.0) {
        return Err(EvalError::param("object_fill must lie in (0, 1]"));
    }
    let mut seen = BTreeSet::new();
    for s in &cfg.sources {
        if !CATEGORIES.contains(&s.category.as_str()) {
            return Err(EvalError::param(format!(
                "unknown category `{}`; expected one of {CATEGORIES:?}",
                s.category
            )));
        }
        if !seen.insert(&s.category) {
            return Err(EvalError::param(format!("category `{}` listed twice", s.category)));
        }
    }
    if cfg.task == Task::Generated && cfg.background_prompts.is_empty() {
        return Err(EvalError::param("the generated task needs background_prompts"));
    }

    let missing_indexes: Vec<PathBuf> = cfg
        .sources
        .iter()
        .flat_map(|s| std::iter::once(&s.index).chain(s.backgrounds.as_ref()))
        .map(|p| root.join(p))
        .filter(|p| !p.is_file())
        .collect();
    if !missing_indexes.is_empty() {
        return Err(EvalError::MissingInputs(missing_indexes));
    }

    let mut provenance = Vec::new();
    let mut selected: Vec<(String, Vec<Pending>)> = Vec::new();
    for source in &cfg.sources {
        let entries: Vec<ObjectEntry> = read_jsonl(&root.join(&source.index))?;
        let total = entries.len();
        let present = entries.iter().filter(|e| e.object_present).count();
        let mut kept: Vec<ObjectEntry> = entries
            .into_iter()
            .filter(|e| !e.object_present && !source.exclude.contains(&e.id))
            .collect();
        let excluded = total - present - kept.len();
        let mut rng = ChaCha8Rng::seed_from_u64(text_seed(&format!("{}/{}", cfg.seed, source.category)));
        let sample = source.sample.unwrap_or(source.category != "tficon");
        if sample {
            kept.shuffle(&mut rng);
            if source.distinct_classes {
                let mut classes = BTreeSet::new();
                kept.retain(|e| classes.insert(e.product_type.to_lowercase()));
            }
            if kept.len() < cfg.per_category {
                return Err(EvalError::param(format!(
                    "category `{}` has {} eligible samples, {} requested",
                    source.category,
                    kept.len(),
                    cfg.per_category
                )));
            }
            kept.truncate(cfg.per_category);
        }

        let pool: Vec<(Option<String>, String)> = match (cfg.task, &source.backgrounds) {
            (Task::Generated, _) => cfg.background_prompts.iter().map(|p| (None, p.clone())).collect(),
            (Task::Existing, Some(index)) => read_jsonl::<BackgroundEntry>(&root.join(index))?
                .into_iter()
                .map(|b| (Some(b.image), b.place))
                .collect(),
            (Task::Existing, None) => Vec::new(),
        };
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rng);

        let mut pending = Vec::with_capacity(kept.len());
        for (i, entry) in kept.into_iter().enumerate() {
            let assigned = (!order.is_empty()).then(|| &pool[order[i % order.len()]]);
            let (background, place) = match cfg.task {
                Task::Generated => (None, assigned.map(|a| a.1.clone()).unwrap_or_default()),
                Task::Existing => match (&entry.background, assigned) {
                    (Some(bg), _) => (Some(bg.clone()), entry.place.clone().unwrap_or_default()),
                    (None, Some((bg, place))) => (bg.clone(), place.clone()),
                    (None, None) => {
                        return Err(EvalError::param(format!(
                            "entry `{}` of `{}` has no background and the source has no pool",
                            entry.id, source.category
                        )))
                    }
                },
            };
            if place.trim().is_empty() {
                return Err(EvalError::param(format!("entry `{}` of `{}` has no place label", entry.id, source.category)));
            }
            pending.push(Pending { entry, background, place });
        }
        provenance.push(format!(
            "{}: {total} candidates, {present} removed as object already present, {excluded} excluded by id, {} {}",
            source.category,
            pending.len(),
            if sample { "sampled" } else { "kept" }
        ));
        selected.push((source.category.clone(), pending));
    }

    let missing: Vec<PathBuf> = selected
        .iter()
        .flat_map(|(_, p)| p.iter())
        .flat_map(|p| std::iter::once(&p.entry.object).chain(p.background.as_ref()))
        .map(|rel| root.join(rel))
        .filter(|p| !p.is_file())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingInputs(missing));
    }

    let mut samples = Vec::new();
    let mut category_counts = BTreeMap::new();
    for (category, pending) in selected {
        category_counts.insert(category.clone(), pending.len());
        for p in pending {
            let object_dims = image::image_dimensions(root.join(&p.entry.object))?;
            let background = p.background.as_deref().map(|b| file_ref(root, b)).transpose()?;
            let canvas = match &p.background {
                Some(b) => image::image_dimensions(root.join(b))?,
                None => cfg.canvas,
            };
            let placement = match p.entry.placement {
                Some(e) => PlacementSpec::new(e.x, e.y, e.scale, canvas),
                None => fitted_placement(object_dims, canvas, cfg.object_fill),
            };
            let id = format!("{category}-{}", p.entry.id);
            placement
                .validate(object_dims)
                .map_err(|e| EvalError::param(format!("sample `{id}`: {e}")))?;
            samples.push(BenchmarkSample {
                object: file_ref(root, &p.entry.object)?,
                background,
                background_prompt: (cfg.task == Task::Generated).then(|| p.place.clone()),
                placement,
                prompt: PromptSpec::new(&p.entry.product_type, &p.entry.color, &p.place, TemplateId::Insertion),
                category: category.clone(),
                id,
            });
        }
    }
    Ok(BenchmarkManifest {
        header: ManifestHeader {
            seed: cfg.seed,
            task: cfg.task,
            root: root.to_path_buf(),
            category_counts,
            provenance,
        },
        samples,
    })
}
