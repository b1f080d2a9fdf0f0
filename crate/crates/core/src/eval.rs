//! Holdout split, batch-progressive training, metrics and the
//! dataset x model comparison grid.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{render_variant, VariantParams, VariantSpec};
use crate::error::{Error, Result};
use crate::features::{image_features, FeatureSet};
use crate::imaging::Image;
use crate::ingest::Manifest;
use crate::learn::{Checkpoint, Hyper, ModelKind, ModelState, ScalerState};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitPlan {
    pub holdout_fraction: f64,
    pub train_fraction_within_batch: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            holdout_fraction: 0.20,
            train_fraction_within_batch: 0.75,
            batch_size: 5000,
            seed: 7,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("holdout_fraction", self.holdout_fraction),
            ("train_fraction_within_batch", self.train_fraction_within_batch),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1), got {f}")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::invalid(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        Ok(())
    }
}

/// Record indices of the training stream (shuffled) and the holdout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub holdout: Vec<usize>,
}

/// Stratified holdout. The total holdout size is `round(n * fraction)`,
/// shared among classes by largest remainder (ties to the lower class id).
pub fn split_indices(labels: &[usize], num_classes: usize, plan: &SplitPlan) -> Result<Split> {
    plan.validate()?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &c) in labels.iter().enumerate() {
        if c >= num_classes {
            return Err(Error::invalid(format!("label {c} >= {num_classes} classes")));
        }
        by_class[c].push(i);
    }
    if let Some(c) = by_class.iter().position(|v| v.len() < 2) {
        return Err(Error::invalid(format!(
            "class {c} has {} records; at least 2 are needed to split",
            by_class[c].len()
        )));
    }
    let f = plan.holdout_fraction;
    let total = (labels.len() as f64 * f).round() as usize;
    let mut quota: Vec<usize> = by_class.iter().map(|v| (v.len() as f64 * f).floor() as usize).collect();
    let mut remainders: Vec<(f64, usize)> = by_class
        .iter()
        .enumerate()
        .map(|(c, v)| (v.len() as f64 * f - quota[c] as f64, c))
        .collect();
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut missing = total.saturating_sub(quota.iter().sum());
    for &(_, c) in &remainders {
        if missing == 0 {
            break;
        }
        if quota[c] + 1 < by_class[c].len() {
            quota[c] += 1;
            missing -= 1;
        }
    }

    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for (c, mut idx) in by_class.into_iter().enumerate() {
        idx.shuffle(&mut seed::stream(plan.seed, "split", c as u64, 0));
        // Keep at least one training record per class.
        let q = quota[c].min(idx.len() - 1);
        holdout.extend_from_slice(&idx[..q]);
        train.extend_from_slice(&idx[q..]);
    }
    train.shuffle(&mut seed::stream(plan.seed, "stream", 0, 0));
    holdout.shuffle(&mut seed::stream(plan.seed, "stream", 1, 0));
    Ok(Split { train, holdout })
}

/// Manifest-level form of [`split_indices`].
pub fn split_holdout(manifest: &Manifest, plan: &SplitPlan) -> Result<(Manifest, Manifest)> {
    let labels: Vec<usize> = manifest.records.iter().map(|r| r.class_id).collect();
    let split = split_indices(&labels, manifest.num_classes, plan)?;
    let pick = |ids: &[usize], suffix: &str| Manifest {
        dataset_id: format!("{}_{suffix}", manifest.dataset_id),
        num_classes: manifest.num_classes,
        records: ids.iter().map(|&i| manifest.records[i].clone()).collect(),
    };
    Ok((pick(&split.train, "train"), pick(&split.holdout, "holdout")))
}

/// Cuts the stream into batches of `batch_size`; a trailing batch of one
/// record joins the previous batch so both parts stay non-empty.
pub fn batch_ranges(len: usize, batch_size: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + batch_size).min(len);
        out.push((start, end));
        start = end;
    }
    if out.len() >= 2 && out.last().map_or(false, |&(s, e)| e - s < 2) {
        let (_, e) = out.pop().unwrap();
        out.last_mut().unwrap().1 = e;
    }
    out
}

/// Size of the training part of a batch of `n`, at least one record per part.
pub fn train_part(n: usize, fraction: f64) -> usize {
    if n < 2 {
        return n;
    }
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub train_acc: Vec<f64>,
    pub val_acc: Vec<f64>,
    /// `(train, validation)` record counts per batch.
    pub batch_sizes: Vec<(usize, usize)>,
    /// Every record id that reached the scaler or the model, in order.
    pub fitted_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub model: ModelState,
    pub scaler: ScalerState,
    pub progress: Progress,
}

fn accuracy_on(model: &ModelState, scaler: &ScalerState, feats: &FeatureSet, ids: &[usize]) -> Result<f64> {
    if ids.is_empty() {
        return Ok(0.0);
    }
    let mut raw = Vec::with_capacity(feats.dim);
    let mut z = Vec::with_capacity(feats.dim);
    let mut correct = 0;
    for &i in ids {
        feats.row_f64_into(i, &mut raw);
        scaler.transform_into(&raw, &mut z)?;
        if model.predict(&z)? == feats.labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / ids.len() as f64)
}

/// Batch-wise training: each batch is split into train/validation parts,
/// the scaler absorbs the train part, the model takes one pass over it, and
/// accuracy is recorded on both parts after the fit.
pub fn train_progressive(
    feats: &FeatureSet,
    stream: &[usize],
    plan: &SplitPlan,
    kind: ModelKind,
    hyper: Hyper,
) -> Result<Trained> {
    plan.validate()?;
    if stream.is_empty() {
        return Err(Error::invalid("training stream is empty"));
    }
    let mut model = ModelState::new(kind, feats.num_classes, feats.dim, hyper)?;
    let mut scaler = ScalerState::new(feats.dim);
    let mut progress = Progress {
        train_acc: Vec::new(),
        val_acc: Vec::new(),
        batch_sizes: Vec::new(),
        fitted_ids: Vec::new(),
    };
    let mut raw = Vec::with_capacity(feats.dim);
    let mut z = Vec::with_capacity(feats.dim);
    for (start, end) in batch_ranges(stream.len(), plan.batch_size) {
        let batch = &stream[start..end];
        let cut = train_part(batch.len(), plan.train_fraction_within_batch);
        let (fit, val) = batch.split_at(cut);

        let mut part = ScalerState::new(feats.dim);
        for &i in fit {
            feats.row_f64_into(i, &mut raw);
            part.push(&raw)?;
        }
        scaler.merge(&part)?;
        for &i in fit {
            feats.row_f64_into(i, &mut raw);
            scaler.transform_into(&raw, &mut z)?;
            model.update_one(&z, feats.labels[i])?;
        }
        progress.fitted_ids.extend_from_slice(fit);
        progress.train_acc.push(accuracy_on(&model, &scaler, feats, fit)?);
        progress.val_acc.push(accuracy_on(&model, &scaler, feats, val)?);
        progress.batch_sizes.push((fit.len(), val.len()));
    }
    Ok(Trained { model, scaler, progress })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub per_class_f1: Vec<f64>,
    /// `confusion[truth][pred]`.
    pub confusion: Vec<Vec<u64>>,
}

/// One-vs-rest precision/recall/F1 with `0/0 = 0`; macro F1 is the
/// unweighted mean over all `num_classes`.
pub fn compute_metrics(preds: &[usize], truth: &[usize], num_classes: usize) -> Result<Metrics> {
    if preds.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            preds.len(),
            truth.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    for (&p, &t) in preds.iter().zip(truth) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::invalid(format!("class id out of range ({t} / {p})")));
        }
        confusion[t][p] += 1;
    }
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut precision = Vec::with_capacity(num_classes);
    let mut recall = Vec::with_capacity(num_classes);
    let mut f1 = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let tp = confusion[c][c];
        let predicted: u64 = (0..num_classes).map(|t| confusion[t][c]).sum();
        let actual: u64 = confusion[c].iter().sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        precision.push(p);
        recall.push(r);
        f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
    }
    let correct: u64 = (0..num_classes).map(|c| confusion[c][c]).sum();
    Ok(Metrics {
        accuracy: correct as f64 / preds.len() as f64,
        macro_f1: f1.iter().sum::<f64>() / num_classes as f64,
        per_class_precision: precision,
        per_class_recall: recall,
        per_class_f1: f1,
        confusion,
    })
}

/// Mean progressive train accuracy minus mean progressive validation accuracy.
pub fn overfit_gap(train: &[f64], val: &[f64]) -> Result<f64> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("overfit gap needs non-empty accuracy series"));
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Ok(mean(train) - mean(val))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub train_stream: usize,
    pub fitted: usize,
    pub validation: usize,
    pub holdout: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AltMetrics {
    pub dataset_id: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset_id: String,
    pub model_kind: ModelKind,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub progressive_train_acc: Vec<f64>,
    pub progressive_val_acc: Vec<f64>,
    pub overfit_gap: f64,
    pub sample_counts: SampleCounts,
    pub confusion: Vec<Vec<u64>>,
    pub alternate: Option<AltMetrics>,
}

pub fn predict_all(model: &ModelState, scaler: &ScalerState, feats: &FeatureSet, ids: &[usize]) -> Result<Vec<usize>> {
    let mut raw = Vec::with_capacity(feats.dim);
    let mut z = Vec::with_capacity(feats.dim);
    ids.iter()
        .map(|&i| {
            feats.row_f64_into(i, &mut raw);
            scaler.transform_into(&raw, &mut z)?;
            model.predict(&z)
        })
        .collect()
}

/// Scores a trained cell on the holdout and, when given, an alternate test set.
pub fn evaluate_cell(
    dataset_id: &str,
    trained: &Trained,
    feats: &FeatureSet,
    split: &Split,
    alternate: Option<(&str, &FeatureSet)>,
) -> Result<MetricsReport> {
    let holdout_truth: Vec<usize> = split.holdout.iter().map(|&i| feats.labels[i]).collect();
    let preds = predict_all(&trained.model, &trained.scaler, feats, &split.holdout)?;
    let m = compute_metrics(&preds, &holdout_truth, feats.num_classes)?;
    let alternate = match alternate {
        Some((id, alt)) if !alt.is_empty() => {
            let ids: Vec<usize> = (0..alt.len()).collect();
            let p = predict_all(&trained.model, &trained.scaler, alt, &ids)?;
            let am = compute_metrics(&p, &alt.labels, alt.num_classes)?;
            Some(AltMetrics {
                dataset_id: id.to_string(),
                accuracy: am.accuracy,
                macro_f1: am.macro_f1,
                samples: alt.len(),
            })
        }
        _ => None,
    };
    let pr = &trained.progress;
    Ok(MetricsReport {
        dataset_id: dataset_id.to_string(),
        model_kind: trained.model.kind,
        accuracy: m.accuracy,
        macro_f1: m.macro_f1,
        per_class_f1: m.per_class_f1,
        progressive_train_acc: pr.train_acc.clone(),
        progressive_val_acc: pr.val_acc.clone(),
        overfit_gap: overfit_gap(&pr.train_acc, &pr.val_acc)?,
        sample_counts: SampleCounts {
            train_stream: split.train.len(),
            fitted: pr.fitted_ids.len(),
            validation: pr.batch_sizes.iter().map(|b| b.1).sum(),
            holdout: split.holdout.len(),
        },
        confusion: m.confusion,
        alternate,
    })
}

/// Renders alternate-test images through a variant and extracts features.
pub fn alternate_features(
    images: &[(Image, usize)],
    num_classes: usize,
    spec: &VariantSpec,
    params: &VariantParams,
    side: usize,
) -> Result<FeatureSet> {
    let rows = images
        .par_iter()
        .map(|(img, _)| image_features(&render_variant(img, spec, params, None)?, side))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureSet::from_rows(
        side,
        num_classes,
        rows,
        images.iter().map(|(_, l)| *l).collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub rank: usize,
    pub dataset_id: String,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
}

/// How the edge-enhanced RGB variant fared against the plain RGB base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendComparison {
    pub rgb_all_edges_mean_accuracy: f64,
    pub base_rgb_mean_accuracy: f64,
    pub accuracy_difference: f64,
    pub rgb_all_edges_rank: usize,
    pub base_rgb_rank: usize,
    pub rgb_all_edges_beats_base: bool,
    pub hed_source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub cells: Vec<MetricsReport>,
    /// Datasets ordered by mean holdout accuracy across models.
    pub ranking: Vec<RankEntry>,
    /// Dataset ids ordered by mean macro F1.
    pub ranking_by_macro_f1: Vec<String>,
    pub alternate_ranking: Option<Vec<RankEntry>>,
    pub trend: Option<TrendComparison>,
}

fn rank(cells: &[MetricsReport], dataset_order: &[String], score: impl Fn(&MetricsReport) -> Option<(f64, f64)>) -> Vec<RankEntry> {
    let mut rows: Vec<(usize, RankEntry)> = dataset_order
        .iter()
        .enumerate()
        .filter_map(|(order, id)| {
            let vals: Vec<(f64, f64)> = cells
                .iter()
                .filter(|c| &c.dataset_id == id)
                .filter_map(&score)
                .collect();
            if vals.is_empty() {
                return None;
            }
            let n = vals.len() as f64;
            Some((
                order,
                RankEntry {
                    rank: 0,
                    dataset_id: id.clone(),
                    mean_accuracy: vals.iter().map(|v| v.0).sum::<f64>() / n,
                    mean_macro_f1: vals.iter().map(|v| v.1).sum::<f64>() / n,
                },
            ))
        })
        .collect();
    rows.sort_by(|a, b| b.1.mean_accuracy.total_cmp(&a.1.mean_accuracy).then(a.0.cmp(&b.0)));
    rows.into_iter()
        .enumerate()
        .map(|(i, (_, mut e))| {
            e.rank = i + 1;
            e
        })
        .collect()
}

impl GridReport {
    /// Builds rankings from cells; `dataset_order` breaks ties.
    pub fn assemble(cells: Vec<MetricsReport>, dataset_order: &[String], hed_source: &str) -> Self {
        let ranking = rank(&cells, dataset_order, |c| Some((c.accuracy, c.macro_f1)));
        let mut by_f1 = ranking.clone();
        by_f1.sort_by(|a, b| b.mean_macro_f1.total_cmp(&a.mean_macro_f1).then(a.rank.cmp(&b.rank)));
        let alternate_ranking = if cells.iter().any(|c| c.alternate.is_some()) {
            Some(rank(&cells, dataset_order, |c| {
                c.alternate.as_ref().map(|a| (a.accuracy, a.macro_f1))
            }))
        } else {
            None
        };
        let find = |id: &str| ranking.iter().find(|e| e.dataset_id == id);
        let trend = match (find("rgb_all_edges"), find("base_rgb")) {
            (Some(a), Some(b)) => Some(TrendComparison {
                rgb_all_edges_mean_accuracy: a.mean_accuracy,
                base_rgb_mean_accuracy: b.mean_accuracy,
                accuracy_difference: a.mean_accuracy - b.mean_accuracy,
                rgb_all_edges_rank: a.rank,
                base_rgb_rank: b.rank,
                rgb_all_edges_beats_base: a.mean_accuracy > b.mean_accuracy,
                hed_source: hed_source.to_string(),
            }),
            _ => None,
        };
        Self {
            ranking_by_macro_f1: by_f1.into_iter().map(|e| e.dataset_id).collect(),
            cells,
            ranking,
            alternate_ranking,
            trend,
        }
    }

    /// Writes `grid.json` and `grid.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json_path = dir.join("grid.json");
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: json_path.clone(),
            source,
        })?;
        fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;

        let csv_path = dir.join("grid.csv");
        let csv_err = |source| Error::Csv {
            path: csv_path.clone(),
            source,
        };
        let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
        w.write_record(["dataset_id", "model", "accuracy", "macro_f1", "overfit_gap"])
            .map_err(csv_err)?;
        for c in &self.cells {
            w.write_record([
                c.dataset_id.clone(),
                c.model_kind.to_string(),
                c.accuracy.to_string(),
                c.macro_f1.to_string(),
                c.overfit_gap.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))
    }

    /// Human-readable ranking table.
    pub fn summary(&self) -> String {
        let mut out = String::from("rank  dataset             mean_acc  mean_f1\n");
        for e in &self.ranking {
            out.push_str(&format!(
                "{:>4}  {:<18}  {:>8.4}  {:>7.4}\n",
                e.rank, e.dataset_id, e.mean_accuracy, e.mean_macro_f1
            ));
        }
        if let Some(t) = &self.trend {
            out.push_str(&format!(
                "rgb_all_edges vs base_rgb: {:.4} vs {:.4} (diff {:+.4}, ranks {} vs {}, hed = {})\n",
                t.rgb_all_edges_mean_accuracy,
                t.base_rgb_mean_accuracy,
                t.accuracy_difference,
                t.rgb_all_edges_rank,
                t.base_rgb_rank,
                t.hed_source
            ));
        }
        out
    }
}

/// Everything needed to train and score one dataset variant.
pub struct GridInput<'a> {
    pub spec: &'a VariantSpec,
    pub features: &'a FeatureSet,
    pub alternate: Option<&'a FeatureSet>,
}

/// Trains every `(variant, model)` cell and assembles the report. Cells are
/// independent; results are ordered by input order then `kinds` order.
pub fn run_grid(
    inputs: &[GridInput<'_>],
    plan: &SplitPlan,
    kinds: &[ModelKind],
    hyper: Hyper,
    hed_source: &str,
) -> Result<(GridReport, Vec<(String, Checkpoint, Progress)>)> {
    let classes: BTreeSet<usize> = inputs.iter().map(|i| i.features.num_classes).collect();
    if classes.len() > 1 {
        return Err(Error::invalid("datasets disagree on the number of classes"));
    }
    let jobs: Vec<(usize, ModelKind)> = (0..inputs.len())
        .flat_map(|i| kinds.iter().map(move |&k| (i, k)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(i, kind)| {
            let input = &inputs[i];
            let id = input.spec.id.name();
            let split = split_indices(&input.features.labels, input.features.num_classes, plan)?;
            let trained = train_progressive(input.features, &split.train, plan, kind, hyper)?;
            let report = evaluate_cell(id, &trained, input.features, &split, input.alternate.map(|a| ("alternate", a)))?;
            Ok((report, (id.to_string(), Checkpoint::new(trained.model, trained.scaler), trained.progress)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (cells, models): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let order: Vec<String> = inputs.iter().map(|i| i.spec.id.name().to_string()).collect();
    Ok((GridReport::assemble(cells, &order, hed_source), models))
}
