//! Blind, shuffled bundles for human rating studies.
//!
//! Pages are in random order and each page shows every method's output
//! under an anonymous letter. The key mapping pages back to samples and
//! letters back to methods is written apart from the pages, and its digest
//! is stamped into the bundle index.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use insertkit_adapters::toy::text_seed;
use insertkit_pipeline::imaging::sha256_hex;
use insertkit_pipeline::TemplateSet;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::benchmark::{BenchmarkManifest, BenchmarkSample};
use crate::error::{EvalError, Result, SampleError};
use crate::report::find_output;

pub const DEFAULT_STUDY_PER_CATEGORY: usize = 7;
pub const KEY_FILE: &str = "key/key.json";
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudyMethod {
    pub name: String,
    pub outputs: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudyOptions {
    pub per_category: usize,
    /// Defaults to every manifest category except `tficon`.
    pub categories: Option<Vec<String>>,
    pub seed: u64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            per_category: DEFAULT_STUDY_PER_CATEGORY,
            categories: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPage {
    pub page: String,
    pub sample_id: String,
    pub category: String,
    /// Letter shown to raters → method name.
    pub slots: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyKey {
    pub seed: u64,
    pub pages: Vec<KeyPage>,
}

impl StudyKey {
    pub fn load(bundle: &Path) -> Result<Self> {
        let path = bundle.join(KEY_FILE);
        serde_json::from_str(&std::fs::read_to_string(&path)?).map_err(|e| EvalError::format(path, e))
    }

    /// Method behind `letter` on `page`.
    pub fn method(&self, page: &str, letter: &str) -> Option<&str> {
        self.pages
            .iter()
            .find(|p| p.page == page)
            .and_then(|p| p.slots.get(letter))
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexPage {
    pub page: String,
    pub prompt: String,
    pub images: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyIndex {
    pub pages: Vec<IndexPage>,
    pub key_sha256: String,
}

#[derive(Debug, Clone)]
pub struct StudyBundle {
    pub dir: PathBuf,
    pub key: StudyKey,
    pub index: StudyIndex,
}

fn letter(i: usize) -> String {
    char::from(b'A' + i as u8).to_string()
}

fn select<'m>(manifest: &'m BenchmarkManifest, opts: &StudyOptions) -> Result<Vec<&'m BenchmarkSample>> {
    let categories = opts.categories.clone().unwrap_or_else(|| {
        manifest
            .categories()
            .into_iter()
            .filter(|c| c != "tficon")
            .collect()
    });
    if categories.is_empty() {
        return Err(EvalError::param("no categories to draw study samples from"));
    }
    let mut chosen = Vec::new();
    for cat in &categories {
        let mut pool: Vec<&BenchmarkSample> = manifest.samples.iter().filter(|s| &s.category == cat).collect();
        if pool.len() < opts.per_category {
            return Err(EvalError::param(format!(
                "category `{cat}` has {} samples, {} requested",
                pool.len(),
                opts.per_category
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(text_seed(&format!("{}/study/{cat}", opts.seed)));
        pool.shuffle(&mut rng);
        chosen.extend(pool.into_iter().take(opts.per_category));
    }
    Ok(chosen)
}

/// Builds the bundle in `out`, which must not exist or be empty.
pub fn build_human_study_bundle(
    manifest: &BenchmarkManifest,
    methods: &[StudyMethod],
    opts: &StudyOptions,
    templates: &TemplateSet,
    out: &Path,
) -> Result<StudyBundle> {
    if methods.is_empty() || methods.len() > 26 {
        return Err(EvalError::param("a study needs between 1 and 26 methods"));
    }
    let mut names: Vec<&str> = methods.iter().map(|m| m.name.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    if names.len() != methods.len() {
        return Err(EvalError::param("method names must be distinct"));
    }
    if out.exists() && std::fs::read_dir(out)?.next().is_some() {
        return Err(EvalError::param(format!("{} already exists and is not empty", out.display())));
    }
    let mut samples = select(manifest, opts)?;

    let mut outputs = BTreeMap::new();
    let mut missing = Vec::new();
    for s in &samples {
        for m in methods {
            match find_output(&m.outputs, &s.id)? {
                Some(o) => {
                    outputs.insert((s.id.clone(), m.name.clone()), o.image);
                }
                None => missing.push(SampleError {
                    sample_id: s.id.clone(),
                    reason: format!("no output from method `{}`", m.name),
                }),
            }
        }
    }
    if !missing.is_empty() {
        return Err(EvalError::Samples(missing));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    samples.shuffle(&mut rng);
    let width = samples.len().to_string().len().max(2);
    let mut key = StudyKey {
        seed: opts.seed,
        pages: Vec::new(),
    };
    let mut index = StudyIndex {
        pages: Vec::new(),
        key_sha256: String::new(),
    };
    for (n, s) in samples.iter().enumerate() {
        let page = format!("page_{:0width$}", n + 1);
        let dir = out.join("pages").join(&page);
        std::fs::create_dir_all(&dir)?;
        let mut order: Vec<&StudyMethod> = methods.iter().collect();
        order.shuffle(&mut rng);
        let prompt = templates.render(&s.prompt)?;
        std::fs::write(dir.join("prompt.txt"), &prompt)?;
        let mut slots = BTreeMap::new();
        let mut images = Vec::new();
        for (i, m) in order.iter().enumerate() {
            let l = letter(i);
            let file = format!("{l}.png");
            image::open(&outputs[&(s.id.clone(), m.name.clone())])?.save(dir.join(&file))?;
            images.push(format!("pages/{page}/{file}"));
            slots.insert(l, m.name.clone());
        }
        key.pages.push(KeyPage {
            page: page.clone(),
            sample_id: s.id.clone(),
            category: s.category.clone(),
            slots,
        });
        index.pages.push(IndexPage { page, prompt, images });
    }
    let key_json = serde_json::to_string_pretty(&key).expect("key serializes");
    std::fs::create_dir_all(out.join("key"))?;
    std::fs::write(out.join(KEY_FILE), &key_json)?;
    index.key_sha256 = sha256_hex(key_json.as_bytes());
    std::fs::write(
        out.join(INDEX_FILE),
        serde_json::to_string_pretty(&index).expect("index serializes"),
    )?;
    Ok(StudyBundle {
        dir: out.to_path_buf(),
        key,
        index,
    })
}
