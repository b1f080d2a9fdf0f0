//! Experiment configuration (JSON). Every field has a default, so `{}` is a
//! valid paper-scale configuration rooted at `./work`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::datasets::{HedSource, VariantParams};
use crate::edges::EdgeParams;
use crate::error::{Error, Result};
use crate::eval::SplitPlan;
use crate::ingest::{Background, IngestOptions, SynthParams};
use crate::learn::{Hyper, ModelKind};

/// Textured-background scenes used as a second, harder test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlternateSet {
    pub enabled: bool,
    pub per_class: usize,
}

impl Default for AlternateSet {
    fn default() -> Self {
        Self {
            enabled: true,
            per_class: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of every artifact. Relative paths resolve against the config file.
    pub work_dir: PathBuf,
    /// Root holding precomputed HED maps at `edges/hed/<image_path>`.
    pub edge_import_root: Option<PathBuf>,
    pub synth: SynthParams,
    pub alternate: AlternateSet,
    pub ingest: IngestOptions,
    pub augment: AugmentConfig,
    pub edges: EdgeParams,
    pub overlay_color: [u8; 3],
    pub split: SplitPlan,
    pub hyper: Hyper,
    pub models: Vec<ModelKind>,
    /// Side length of the square grayscale feature image.
    pub side: usize,
    /// Master seed; overrides `synth.seed` and `split.seed`.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            work_dir: PathBuf::from("work"),
            edge_import_root: None,
            synth: SynthParams::default(),
            alternate: AlternateSet::default(),
            ingest: IngestOptions::default(),
            augment: AugmentConfig::default(),
            edges: EdgeParams::default(),
            overlay_color: [0, 0, 0],
            split: SplitPlan::default(),
            hyper: Hyper::default(),
            models: ModelKind::ALL.to_vec(),
            side: 200,
            seed: 7,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Json {
            path: origin.to_path_buf(),
            source,
        })
    }

    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.work_dir.is_relative() {
            cfg.work_dir = base.join(&cfg.work_dir);
        }
        if let Some(root) = cfg.edge_import_root.as_mut() {
            if root.is_relative() {
                *root = base.join(&*root);
            }
        }
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.side == 0 {
            return Err(Error::invalid("side must be > 0"));
        }
        if self.models.is_empty() {
            return Err(Error::invalid("models list is empty"));
        }
        if self.alternate.enabled && self.alternate.per_class == 0 {
            return Err(Error::invalid("alternate.per_class must be > 0 when enabled"));
        }
        if let Some(root) = &self.edge_import_root {
            if !root.is_dir() {
                return Err(Error::invalid(format!(
                    "edge_import_root {} is not a directory",
                    root.display()
                )));
            }
        }
        self.synth_params().validate()?;
        self.augment.validate()?;
        self.edges.validate()?;
        self.split_plan().validate()
    }

    pub fn synth_params(&self) -> SynthParams {
        SynthParams {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn alternate_params(&self) -> SynthParams {
        SynthParams {
            per_class: self.alternate.per_class,
            background: Background::Textured,
            seed: crate::seed::derive_seed(self.seed, "alternate", 0, 0),
            ..self.synth.clone()
        }
    }

    pub fn split_plan(&self) -> SplitPlan {
        SplitPlan {
            seed: self.seed,
            ..self.split
        }
    }

    pub fn hed_source(&self) -> HedSource {
        match &self.edge_import_root {
            Some(root) => HedSource::Import { root: root.clone() },
            None => HedSource::ThickProxy,
        }
    }

    pub fn variant_params(&self) -> VariantParams {
        VariantParams {
            edges: self.edges,
            hed: self.hed_source(),
            overlay_color: self.overlay_color,
        }
    }
}
