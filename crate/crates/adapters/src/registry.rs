//! Model registry and on-disk cache layout.
//!
//! The registry file is TOML:
//!
//! ```toml
//! [roles.base_denoiser]
//! identifier = "stabilityai/stable-diffusion-2-1"
//! revision = "main"
//! files = ["unet/diffusion_pytorch_model.safetensors"]
//! ```
//!
//! Weights for a role live under `<cache>/<role>/<identifier>/<revision>/`,
//! with `/` in the identifier replaced by `--`. A file written as
//! `other/repo:path` is fetched from `other/repo` instead of the entry's own
//! repository but stored under the same directory. Identifiers starting with
//! `toy:` or `classical:` need no files.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{AdapterError, Result};

/// Environment variable overriding the cache root.
pub const CACHE_ENV: &str = "INSERTKIT_CACHE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Encoder,
    Decoder,
    BaseDenoiser,
    RefinerDenoiser,
    Upscaler,
    Segmenter,
    TextEncoder,
    BgGenerator,
    ClipScorer,
    HpsScorer,
}

impl ModelRole {
    /// Roles a pipeline run needs.
    pub const PIPELINE: [ModelRole; 8] = [
        ModelRole::Encoder,
        ModelRole::Decoder,
        ModelRole::BaseDenoiser,
        ModelRole::RefinerDenoiser,
        ModelRole::Upscaler,
        ModelRole::Segmenter,
        ModelRole::TextEncoder,
        ModelRole::BgGenerator,
    ];

    /// Roles the evaluation harness needs.
    pub const SCORING: [ModelRole; 2] = [ModelRole::ClipScorer, ModelRole::HpsScorer];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelRole::Encoder => "encoder",
            ModelRole::Decoder => "decoder",
            ModelRole::BaseDenoiser => "base_denoiser",
            ModelRole::RefinerDenoiser => "refiner_denoiser",
            ModelRole::Upscaler => "upscaler",
            ModelRole::Segmenter => "segmenter",
            ModelRole::TextEncoder => "text_encoder",
            ModelRole::BgGenerator => "bg_generator",
            ModelRole::ClipScorer => "clip_scorer",
            ModelRole::HpsScorer => "hps_scorer",
        }
    }

    pub fn all() -> impl Iterator<Item = ModelRole> {
        Self::PIPELINE.into_iter().chain(Self::SCORING)
    }
}

impl fmt::Display for ModelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelRole {
    type Err = AdapterError;

    fn from_str(s: &str) -> Result<Self> {
        ModelRole::all()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| AdapterError::Registry(format!("unknown model role `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub identifier: String,
    pub revision: String,
    #[serde(default)]
    pub files: Vec<String>,
}

impl ModelEntry {
    pub fn new(identifier: &str, revision: &str, files: &[&str]) -> Self {
        Self {
            identifier: identifier.into(),
            revision: revision.into(),
            files: files.iter().map(|f| f.to_string()).collect(),
        }
    }

    /// Needs no downloaded weights.
    pub fn is_builtin(&self) -> bool {
        self.identifier.starts_with("toy:") || self.identifier.starts_with("classical:")
    }

    pub fn is_toy(&self) -> bool {
        self.identifier.starts_with("toy:")
    }

    /// `(source repository, path inside it)` for each listed file.
    pub fn sources(&self) -> Vec<(String, String)> {
        self.files
            .iter()
            .map(|f| match f.split_once(':') {
                Some((repo, path)) => (repo.to_string(), path.to_string()),
                None => (self.identifier.clone(), f.clone()),
            })
            .collect()
    }

    /// Path of a source file inside the entry's cache directory. Files from
    /// other repositories live under a directory named after that repository.
    pub fn local_path(&self, repo: &str, path: &str) -> PathBuf {
        if repo == self.identifier {
            PathBuf::from(path)
        } else {
            Path::new(&repo.replace('/', "--")).join(path)
        }
    }
}

/// A role resolved to concrete local files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedModel {
    pub role: ModelRole,
    pub identifier: String,
    pub revision: String,
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

impl ResolvedModel {
    /// Local path of the listed file whose name ends with `suffix`.
    pub fn file(&self, suffix: &str) -> Option<&Path> {
        self.files.iter().map(PathBuf::as_path).find(|p| p.to_string_lossy().ends_with(suffix))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModelRegistry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_root: Option<PathBuf>,
    #[serde(default)]
    roles: BTreeMap<String, ModelEntry>,
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Every role backed by the weight-free toy adapters.
    pub fn toy() -> Self {
        let mut reg = Self::empty();
        for role in ModelRole::all() {
            reg.set(role, ModelEntry::new(&format!("toy:{role}"), "v1", &[]));
        }
        reg
    }

    /// SD-2.1 for composition, SDXL for refinement, colorization and
    /// background generation, CLIP ViT-B/32 for scoring.
    pub fn default_stack() -> Self {
        const SD21: &str = "stabilityai/stable-diffusion-2-1";
        const SDXL: &str = "stabilityai/stable-diffusion-xl-base-1.0";
        let sdxl_files = [
            "unet/diffusion_pytorch_model.safetensors",
            "vae/diffusion_pytorch_model.safetensors",
            "text_encoder/model.safetensors",
            "text_encoder_2/model.safetensors",
            "openai/clip-vit-large-patch14:tokenizer.json",
            "laion/CLIP-ViT-bigG-14-laion2B-39B-b160k:tokenizer.json",
        ];
        let mut reg = Self::empty();
        reg.set(ModelRole::Encoder, ModelEntry::new(SD21, "main", &["vae/diffusion_pytorch_model.safetensors"]));
        reg.set(ModelRole::Decoder, ModelEntry::new(SD21, "main", &["vae/diffusion_pytorch_model.safetensors"]));
        reg.set(ModelRole::BaseDenoiser, ModelEntry::new(SD21, "main", &["unet/diffusion_pytorch_model.safetensors"]));
        reg.set(
            ModelRole::TextEncoder,
            ModelEntry::new(SD21, "main", &["text_encoder/model.safetensors", "openai/clip-vit-base-patch32:tokenizer.json"]),
        );
        reg.set(ModelRole::RefinerDenoiser, ModelEntry::new(SDXL, "main", &sdxl_files));
        reg.set(ModelRole::BgGenerator, ModelEntry::new(SDXL, "main", &sdxl_files));
        reg.set(ModelRole::Upscaler, ModelEntry::new("classical:lanczos3", "v1", &[]));
        reg.set(ModelRole::Segmenter, ModelEntry::new("classical:threshold", "v1", &[]));
        reg.set(
            ModelRole::ClipScorer,
            ModelEntry::new("openai/clip-vit-base-patch32", "main", &["model.safetensors", "tokenizer.json"]),
        );
        reg.set(ModelRole::HpsScorer, ModelEntry::new("xswu/HPSv2", "main", &["HPS_v2.1_compressed.pt"]));
        reg
    }

    pub fn set(&mut self, role: ModelRole, entry: ModelEntry) {
        self.roles.insert(role.as_str().to_string(), entry);
    }

    pub fn get(&self, role: ModelRole) -> Option<&ModelEntry> {
        self.roles.get(role.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = (ModelRole, &ModelEntry)> {
        self.roles
            .iter()
            .filter_map(|(k, v)| k.parse::<ModelRole>().ok().map(|r| (r, v)))
    }

    /// True when every pipeline role is a toy adapter.
    pub fn is_all_toy(&self) -> bool {
        ModelRole::PIPELINE
            .iter()
            .all(|r| self.get(*r).is_some_and(ModelEntry::is_toy))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let reg: Self = toml::from_str(text).map_err(|e| AdapterError::Registry(e.to_string()))?;
        for key in reg.roles.keys() {
            key.parse::<ModelRole>()?;
        }
        Ok(reg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| AdapterError::Registry(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    /// Cache root: `override_root`, else `$INSERTKIT_CACHE`, else the
    /// registry's own setting, else `~/.cache/insertkit`.
    pub fn cache_root(&self, override_root: Option<&Path>) -> PathBuf {
        if let Some(root) = override_root {
            return root.to_path_buf();
        }
        if let Some(env) = std::env::var_os(CACHE_ENV) {
            return PathBuf::from(env);
        }
        if let Some(root) = &self.cache_root {
            return root.clone();
        }
        let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
        home.join(".cache").join("insertkit")
    }

    pub fn entry_dir(cache_root: &Path, role: ModelRole, entry: &ModelEntry) -> PathBuf {
        cache_root
            .join(role.as_str())
            .join(entry.identifier.replace('/', "--"))
            .join(&entry.revision)
    }

    pub fn resolve(&self, role: ModelRole, cache_root: &Path) -> Result<ResolvedModel> {
        let entry = self
            .get(role)
            .ok_or_else(|| AdapterError::Registry(format!("no model registered for role `{role}`")))?;
        let dir = Self::entry_dir(cache_root, role, entry);
        let mut files = Vec::new();
        for (repo, path) in entry.sources() {
            let local = dir.join(entry.local_path(&repo, &path));
            if !local.is_file() {
                return Err(AdapterError::MissingWeights {
                    role: role.to_string(),
                    identifier: entry.identifier.clone(),
                    revision: entry.revision.clone(),
                    path: local,
                });
            }
            files.push(local);
        }
        Ok(ResolvedModel {
            role,
            identifier: entry.identifier.clone(),
            revision: entry.revision.clone(),
            dir,
            files,
        })
    }

    /// Resolves every role in `roles`, reporting all failures at once.
    pub fn resolve_all(&self, roles: &[ModelRole], cache_root: &Path) -> Result<Vec<ResolvedModel>> {
        let mut ok = Vec::new();
        let mut missing = Vec::new();
        for &role in roles {
            match self.resolve(role, cache_root) {
                Ok(r) => ok.push(r),
                Err(e) => missing.push(e.to_string()),
            }
        }
        if missing.is_empty() {
            Ok(ok)
        } else {
            Err(AdapterError::Registry(missing.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_preserves_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let reg = ModelRegistry::default_stack();
        let path = dir.path().join("registry.toml");
        reg.save(&path).unwrap();
        let back = ModelRegistry::load(&path).unwrap();
        assert_eq!(back, reg);
        for role in ModelRole::all() {
            let a = reg.resolve(role, dir.path()).map_err(|e| e.to_string());
            let b = back.resolve(role, dir.path()).map_err(|e| e.to_string());
            assert_eq!(a, b, "{role}");
        }
    }

    #[test]
    fn missing_weights_name_the_fetch_command() {
        let dir = tempfile::tempdir().unwrap();
        let err = ModelRegistry::default_stack()
            .resolve(ModelRole::BaseDenoiser, dir.path())
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("fetch-models --role base_denoiser"), "{msg}");
    }

    #[test]
    fn toy_registry_resolves_without_files() {
        let dir = tempfile::tempdir().unwrap();
        let reg = ModelRegistry::toy();
        assert!(reg.is_all_toy());
        let all: Vec<_> = ModelRole::all().collect();
        assert_eq!(reg.resolve_all(&all, dir.path()).unwrap().len(), all.len());
    }

    #[test]
    fn cache_layout_is_role_identifier_revision() {
        let entry = ModelEntry::new("stabilityai/stable-diffusion-2-1", "abc123", &[]);
        let dir = ModelRegistry::entry_dir(Path::new("/cache"), ModelRole::BaseDenoiser, &entry);
        assert_eq!(dir, Path::new("/cache/base_denoiser/stabilityai--stable-diffusion-2-1/abc123"));
    }

    #[test]
    fn foreign_repo_sources_split_on_colon() {
        let entry = ModelEntry::new("a/b", "main", &["x/y.bin", "c/d:tokenizer.json"]);
        assert_eq!(
            entry.sources(),
            vec![("a/b".into(), "x/y.bin".into()), ("c/d".into(), "tokenizer.json".into())]
        );
        assert_eq!(entry.local_path("a/b", "x/y.bin"), Path::new("x/y.bin"));
        assert_eq!(entry.local_path("c/d", "tokenizer.json"), Path::new("c--d/tokenizer.json"));
    }

    #[test]
    fn unknown_role_in_file_is_rejected() {
        let text = "[roles.painter]\nidentifier = \"x\"\nrevision = \"y\"\n";
        assert!(ModelRegistry::from_toml_str(text).is_err());
    }

    #[test]
    fn resolve_all_lists_every_missing_role() {
        let dir = tempfile::tempdir().unwrap();
        let err = ModelRegistry::default_stack()
            .resolve_all(&ModelRole::PIPELINE, dir.path())
            .unwrap_err()
            .to_string();
        for role in ["encoder", "base_denoiser", "refiner_denoiser", "bg_generator"] {
            assert!(err.contains(&format!("--role {role}")), "{role} missing from {err}");
        }
        assert!(!err.contains("--role upscaler"));
    }
}
