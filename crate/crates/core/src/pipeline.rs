//! Stage functions that run the experiment under a work directory.
//!
//! ```text
//! raw/            synthetic scenes + one .txt annotation per scene
//! alt_raw/        textured-background scenes (alternate test set)
//! ground_truth/   object crops
//! alt/            alternate crops
//! balanced/       augmented copies, balance plan, balanced manifest
//! datasets/<id>/  the 15 variants
//! models/<id>/    <model>.json checkpoints + <model>.progress.json
//! metrics/<id>/   <model>.json holdout metrics
//! report/         grid.json + grid.csv
//! experiment.json index of everything above
//! ```
//!
//! Every stage reads its inputs from disk, so stages can be re-run alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::augment::{compute_balance_plan, run_balance_augment};
use crate::config::ExperimentConfig;
use crate::datasets::{build_variant, enumerate_variants, HedSource, VariantId, VariantParams, VariantSpec};
use crate::error::{Error, Result};
use crate::eval::{
    alternate_features, evaluate_cell, split_indices, train_progressive, GridReport, MetricsReport, Progress, Split,
    Trained,
};
use crate::features::{load_features, FeatureSet};
use crate::imaging::Image;
use crate::ingest::{generate_synthetic_corpus, ingest_corpus, IngestOptions, Manifest};
use crate::learn::{Checkpoint, ModelKind};

pub const RAW: &str = "raw";
pub const ALT_RAW: &str = "alt_raw";
pub const GROUND_TRUTH: &str = "ground_truth";
pub const ALT: &str = "alt";
pub const BALANCED: &str = "balanced";
pub const DATASETS: &str = "datasets";
pub const MODELS: &str = "models";
pub const METRICS: &str = "metrics";
pub const REPORT: &str = "report";
pub const EXPERIMENT_FILE: &str = "experiment.json";

const MANIFEST_FILE: &str = "manifest.jsonl";

/// Optional restriction of the variant and model axes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Selection {
    pub variants: Option<Vec<VariantId>>,
    pub models: Option<Vec<ModelKind>>,
}

/// Progress file written next to each checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub dataset_id: String,
    pub model_kind: ModelKind,
    pub progress: Progress,
    /// Record indices (into the variant manifest) held out from training.
    pub holdout_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFiles {
    pub checkpoint: String,
    pub progress: String,
    pub metrics: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantEntry {
    pub id: VariantId,
    pub detectors: Vec<String>,
    pub overlay: bool,
    pub manifest: String,
    pub records: usize,
    pub models: BTreeMap<ModelKind, ModelFiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentIndex {
    pub seed: u64,
    pub classes: Vec<String>,
    pub hed_source: String,
    /// Stage name to manifest path.
    pub stage_manifests: BTreeMap<String, String>,
    pub balance_plan: String,
    /// Annotation files are `<scene>.txt` beside each scene in these manifests.
    pub annotated_manifests: Vec<String>,
    pub variants: Vec<VariantEntry>,
    pub report_json: String,
    pub report_csv: String,
}

pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub selection: Selection,
}

fn manifest_rel(dir: &str) -> String {
    format!("{dir}/{MANIFEST_FILE}")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Removes a stage directory so a re-run leaves no stale files behind.
fn reset_dir(path: &Path) -> Result<()> {
    match fs::remove_dir_all(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(Error::io(path, e)),
    }
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig, selection: Selection) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, selection })
    }

    pub fn root(&self) -> &Path {
        &self.cfg.work_dir
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.cfg.work_dir.join(rel)
    }

    pub fn variants(&self) -> Vec<VariantSpec> {
        enumerate_variants()
            .into_iter()
            .filter(|v| self.selection.variants.as_ref().map_or(true, |s| s.contains(&v.id)))
            .collect()
    }

    pub fn models(&self) -> Vec<ModelKind> {
        self.cfg
            .models
            .iter()
            .copied()
            .filter(|m| self.selection.models.as_ref().map_or(true, |s| s.contains(m)))
            .collect()
    }

    fn read_manifest(&self, dir: &str) -> Result<Manifest> {
        Manifest::read_jsonl(&self.path(&manifest_rel(dir)), dir)
    }

    pub fn checkpoint_rel(variant: VariantId, model: ModelKind) -> String {
        format!("{MODELS}/{variant}/{model}.json")
    }

    pub fn progress_rel(variant: VariantId, model: ModelKind) -> String {
        format!("{MODELS}/{variant}/{model}.progress.json")
    }

    pub fn metrics_rel(variant: VariantId, model: ModelKind) -> String {
        format!("{METRICS}/{variant}/{model}.json")
    }

    /// Renders the ground-truth scenes and, when enabled, the textured
    /// alternate scenes.
    pub fn synth(&self) -> Result<()> {
        for (dir, params, enabled) in [
            (RAW, self.cfg.synth_params(), true),
            (ALT_RAW, self.cfg.alternate_params(), self.cfg.alternate.enabled),
        ] {
            reset_dir(&self.path(dir))?;
            if !enabled {
                continue;
            }
            info!("synth: {} classes x {} scenes -> {dir}/", params.num_classes, params.per_class);
            let m = generate_synthetic_corpus(&params, self.root(), dir, dir)?;
            m.write_jsonl(&self.path(&manifest_rel(dir)))?;
        }
        Ok(())
    }

    /// Crops every scene to its object and writes annotations.
    pub fn ingest(&self) -> Result<()> {
        let stages = [
            (RAW, GROUND_TRUTH, self.cfg.ingest),
            (
                ALT_RAW,
                ALT,
                IngestOptions {
                    use_recorded_bbox: true,
                    ..self.cfg.ingest
                },
            ),
        ];
        for (src, dst, opts) in stages {
            reset_dir(&self.path(dst))?;
            if src == ALT_RAW && !self.cfg.alternate.enabled {
                continue;
            }
            let raw = self.read_manifest(src)?;
            info!("ingest: {} scenes {src}/ -> {dst}/", raw.records.len());
            let m = ingest_corpus(&raw, self.root(), dst, dst, &opts)?;
            m.write_jsonl(&self.path(&manifest_rel(dst)))?;
        }
        Ok(())
    }

    /// Balances the ground-truth corpus with augmented copies.
    pub fn augment(&self) -> Result<()> {
        reset_dir(&self.path(BALANCED))?;
        let gt = self.read_manifest(GROUND_TRUTH)?;
        let counts: BTreeMap<usize, usize> = gt.class_counts().into_iter().enumerate().collect();
        let plan = compute_balance_plan(&counts, self.cfg.augment.target)?;
        info!("augment: balancing {} classes to {} images each", counts.len(), plan.target());
        write_json(&self.path(&format!("{BALANCED}/plan.json")), &plan)?;
        let m = run_balance_augment(&gt, &plan, &self.cfg.augment, self.cfg.seed, self.root(), BALANCED, BALANCED)?;
        m.write_jsonl(&self.path(&manifest_rel(BALANCED)))
    }

    /// Materialises the selected variants and writes `experiment.json`.
    pub fn build_datasets(&self) -> Result<()> {
        let balanced = self.read_manifest(BALANCED)?;
        let params = self.cfg.variant_params();
        for spec in self.variants() {
            reset_dir(&self.path(&format!("{DATASETS}/{}", spec.id)))?;
            info!("build-datasets: {} ({} records)", spec.id, balanced.records.len());
            build_variant(&balanced, &spec, &params, self.root(), DATASETS)?;
        }
        self.write_index(&balanced)
    }

    fn write_index(&self, balanced: &Manifest) -> Result<()> {
        let mut stage_manifests = BTreeMap::new();
        let mut annotated = vec![manifest_rel(RAW)];
        for dir in [RAW, GROUND_TRUTH, BALANCED] {
            stage_manifests.insert(dir.to_string(), manifest_rel(dir));
        }
        if self.cfg.alternate.enabled {
            stage_manifests.insert(ALT_RAW.to_string(), manifest_rel(ALT_RAW));
            stage_manifests.insert(ALT.to_string(), manifest_rel(ALT));
            annotated.push(manifest_rel(ALT_RAW));
        }
        let variants = enumerate_variants()
            .into_iter()
            .map(|spec| VariantEntry {
                id: spec.id,
                detectors: spec.detectors.iter().map(|d| d.name().to_string()).collect(),
                overlay: spec.overlay,
                manifest: format!("{DATASETS}/{}/{MANIFEST_FILE}", spec.id),
                records: balanced.records.len(),
                models: self
                    .cfg
                    .models
                    .iter()
                    .map(|&m| {
                        (
                            m,
                            ModelFiles {
                                checkpoint: Self::checkpoint_rel(spec.id, m),
                                progress: Self::progress_rel(spec.id, m),
                                metrics: Self::metrics_rel(spec.id, m),
                            },
                        )
                    })
                    .collect(),
            })
            .collect();
        let index = ExperimentIndex {
            seed: self.cfg.seed,
            classes: balanced.class_names(),
            hed_source: self.cfg.hed_source().label().to_string(),
            stage_manifests,
            balance_plan: format!("{BALANCED}/plan.json"),
            annotated_manifests: annotated,
            variants,
            report_json: format!("{REPORT}/grid.json"),
            report_csv: format!("{REPORT}/grid.csv"),
        };
        write_json(&self.path(EXPERIMENT_FILE), &index)
    }

    fn variant_data(&self, id: VariantId) -> Result<(Manifest, FeatureSet, Split)> {
        let dir = format!("{DATASETS}/{id}");
        let manifest = Manifest::read_jsonl(&self.path(&manifest_rel(&dir)), id.name())?;
        let feats = load_features(self.root(), &manifest, self.cfg.side)?;
        let split = split_indices(&feats.labels, feats.num_classes, &self.cfg.split_plan())?;
        Ok((manifest, feats, split))
    }

    /// Trains every selected model on every selected variant.
    pub fn train(&self) -> Result<()> {
        let plan = self.cfg.split_plan();
        let models = self.models();
        for spec in self.variants() {
            let (_, feats, split) = self.variant_data(spec.id)?;
            reset_dir(&self.path(&format!("{MODELS}/{}", spec.id)))?;
            info!(
                "train: {} ({} stream / {} holdout, dim {})",
                spec.id,
                split.train.len(),
                split.holdout.len(),
                feats.dim
            );
            models.par_iter().try_for_each(|&kind| {
                let t = train_progressive(&feats, &split.train, &plan, kind, self.cfg.hyper)?;
                Checkpoint::new(t.model, t.scaler).save(&self.path(&Self::checkpoint_rel(spec.id, kind)))?;
                let log = TrainingLog {
                    dataset_id: spec.id.name().to_string(),
                    model_kind: kind,
                    progress: t.progress,
                    holdout_ids: split.holdout.clone(),
                };
                write_json(&self.path(&Self::progress_rel(spec.id, kind)), &log)
            })?;
        }
        Ok(())
    }

    /// Alternate crops, loaded once; their HED slot always uses the proxy
    /// since imported maps only cover the main corpus.
    fn alternate_images(&self) -> Result<Option<(Vec<(Image, usize)>, usize)>> {
        if !self.cfg.alternate.enabled {
            return Ok(None);
        }
        let m = self.read_manifest(ALT)?;
        let images = m
            .records
            .par_iter()
            .map(|r| Ok((Image::load(&self.path(&r.image_path))?, r.class_id)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Some((images, m.num_classes)))
    }

    /// Scores each checkpoint on its holdout and the alternate set.
    pub fn evaluate(&self) -> Result<()> {
        let alt = self.alternate_images()?;
        let alt_params = VariantParams {
            hed: HedSource::ThickProxy,
            ..self.cfg.variant_params()
        };
        let models = self.models();
        for spec in self.variants() {
            let (_, feats, split) = self.variant_data(spec.id)?;
            let alt_feats = match &alt {
                Some((images, classes)) => Some(alternate_features(
                    images,
                    (*classes).max(feats.num_classes),
                    &spec,
                    &alt_params,
                    self.cfg.side,
                )?),
                None => None,
            };
            reset_dir(&self.path(&format!("{METRICS}/{}", spec.id)))?;
            info!("evaluate: {}", spec.id);
            models.par_iter().try_for_each(|&kind| {
                let ck = Checkpoint::load(&self.path(&Self::checkpoint_rel(spec.id, kind)))?;
                let log: TrainingLog = read_json(&self.path(&Self::progress_rel(spec.id, kind)))?;
                if log.holdout_ids != split.holdout {
                    return Err(Error::invalid(format!(
                        "{}/{kind}: checkpoint was trained on a different split; re-run train",
                        spec.id
                    )));
                }
                let trained = Trained {
                    model: ck.model,
                    scaler: ck.scaler,
                    progress: log.progress,
                };
                let alt_ref = alt_feats.as_ref().map(|f| (ALT, f));
                let report = evaluate_cell(spec.id.name(), &trained, &feats, &split, alt_ref)?;
                write_json(&self.path(&Self::metrics_rel(spec.id, kind)), &report)
            })?;
        }
        Ok(())
    }

    /// Collects the per-cell metrics into the grid report.
    pub fn report(&self) -> Result<GridReport> {
        let variants = self.variants();
        let models = self.models();
        let mut cells = Vec::with_capacity(variants.len() * models.len());
        for spec in &variants {
            for &kind in &models {
                let cell: MetricsReport = read_json(&self.path(&Self::metrics_rel(spec.id, kind)))?;
                cells.push(cell);
            }
        }
        let order: Vec<String> = variants.iter().map(|v| v.id.name().to_string()).collect();
        let grid = GridReport::assemble(cells, &order, self.cfg.hed_source().label());
        reset_dir(&self.path(REPORT))?;
        grid.write(&self.path(REPORT))?;
        info!("report: {} cells -> {REPORT}/", grid.cells.len());
        Ok(grid)
    }

    /// The whole workflow, in order.
    pub fn run_all(&self) -> Result<GridReport> {
        self.synth()?;
        self.ingest()?;
        self.augment()?;
        self.build_datasets()?;
        self.train()?;
        self.evaluate()?;
        self.report()
    }
}
