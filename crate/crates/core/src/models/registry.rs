use std::collections::BTreeMap;
use std::sync::Arc;

use super::{Detector, Embedder, Generator};
use crate::error::{Error, Result};

/// Model handles keyed by id. Synthetic worlds and external adapters both
/// register here; the pipeline and the CLI resolve ids through it.
#[derive(Clone, Default)]
pub struct ModelRegistry {
    generators: BTreeMap<String, Arc<dyn Generator>>,
    embedders: BTreeMap<String, Arc<dyn Embedder>>,
    detectors: BTreeMap<String, Arc<dyn Detector>>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_generator(&mut self, g: Arc<dyn Generator>) {
        self.generators.insert(g.id().to_string(), g);
    }

    pub fn register_embedder(&mut self, f: Arc<dyn Embedder>) {
        self.embedders.insert(f.model_id().to_string(), f);
    }

    pub fn register_detector(&mut self, d: Arc<dyn Detector>) {
        self.detectors.insert(d.id().to_string(), d);
    }

    pub fn generator(&self, id: &str) -> Result<Arc<dyn Generator>> {
        self.generators.get(id).cloned().ok_or_else(|| Error::UnknownModel(id.to_string()))
    }

    pub fn embedder(&self, id: &str) -> Result<Arc<dyn Embedder>> {
        self.embedders.get(id).cloned().ok_or_else(|| Error::UnknownModel(id.to_string()))
    }

    pub fn detector(&self, id: &str) -> Result<Arc<dyn Detector>> {
        self.detectors.get(id).cloned().ok_or_else(|| Error::UnknownModel(id.to_string()))
    }

    pub fn embedder_ids(&self) -> Vec<String> {
        self.embedders.keys().cloned().collect()
    }
}

impl std::fmt::Debug for ModelRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelRegistry")
            .field("generators", &self.generators.keys().collect::<Vec<_>>())
            .field("embedders", &self.embedders.keys().collect::<Vec<_>>())
            .field("detectors", &self.detectors.keys().collect::<Vec<_>>())
            .finish()
    }
}
