use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use insertkit_adapters::{ModelRegistry, ModelRole};

use crate::clip::{ClipModel, ToyClip};
use crate::error::{EvalError, Result};
use crate::perceptual::{FilterBankMetric, PerceptualMetric};
use crate::preference::{PreferenceModel, ToyPreference};

/// The three scoring models of an evaluation.
#[derive(Clone)]
pub struct Scorers {
    pub clip: Arc<dyn ClipModel>,
    pub preference: Arc<dyn PreferenceModel>,
    pub perceptual: Arc<dyn PerceptualMetric>,
}

impl Scorers {
    pub fn toy() -> Self {
        Self {
            clip: Arc::new(ToyClip),
            preference: Arc::new(ToyPreference),
            perceptual: Arc::new(FilterBankMetric::default()),
        }
    }

    /// Builds scorers from the registry's `clip_scorer` and `hps_scorer`
    /// roles. Missing weights produce the fetch hint of the registry.
    pub fn load(registry: &ModelRegistry, cache_root: &Path) -> Result<Self> {
        let entry = |role| {
            registry
                .get(role)
                .ok_or_else(|| EvalError::param(format!("no model registered for role `{role}`")))
        };
        let clip: Arc<dyn ClipModel> = if entry(ModelRole::ClipScorer)?.is_toy() {
            Arc::new(ToyClip)
        } else {
            real::clip(registry, cache_root)?
        };
        let preference: Arc<dyn PreferenceModel> = if entry(ModelRole::HpsScorer)?.is_toy() {
            Arc::new(ToyPreference)
        } else {
            real::preference(registry, cache_root)?
        };
        Ok(Self {
            clip,
            preference,
            perceptual: Arc::new(FilterBankMetric::default()),
        })
    }

    pub fn ids(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("clip".to_string(), self.clip.id().to_string()),
            ("hpsv2".to_string(), self.preference.id().to_string()),
            ("lpips".to_string(), self.perceptual.id().to_string()),
        ])
    }
}

mod real {
    use std::path::Path;
    use std::sync::Arc;

    use insertkit_adapters::{AdapterError, ModelRegistry, ModelRole};

    use crate::clip::ClipModel;
    use crate::error::Result;
    use crate::preference::PreferenceModel;

    fn unavailable(registry: &ModelRegistry, role: ModelRole, cache_root: &Path) -> AdapterError {
        if let Err(missing) = registry.resolve(role, cache_root) {
            return missing;
        }
        let id = registry.get(role).map(|e| e.identifier.clone()).unwrap_or_default();
        AdapterError::model(id, "no neural scoring backend in this build; use toy scorers")
    }

    pub fn clip(registry: &ModelRegistry, cache_root: &Path) -> Result<Arc<dyn ClipModel>> {
        Err(unavailable(registry, ModelRole::ClipScorer, cache_root).into())
    }

    pub fn preference(registry: &ModelRegistry, cache_root: &Path) -> Result<Arc<dyn PreferenceModel>> {
        Err(unavailable(registry, ModelRole::HpsScorer, cache_root).into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_checkpoint_names_the_fetch_command() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = ModelRegistry::toy();
        let real = ModelRegistry::default_stack();
        reg.set(ModelRole::HpsScorer, real.get(ModelRole::HpsScorer).unwrap().clone());
        let err = Scorers::load(&reg, dir.path()).err().unwrap().to_string();
        assert!(err.contains("fetch-models --role hps_scorer"), "{err}");
    }

    #[test]
    fn toy_registry_gives_toy_scorers() {
        let dir = tempfile::tempdir().unwrap();
        let s = Scorers::load(&ModelRegistry::toy(), dir.path()).unwrap();
        assert_eq!(s.ids()["clip"], "toy:clip");
    }
}
