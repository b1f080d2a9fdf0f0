//! Image to feature-vector preprocessing: grayscale, square resize, flatten.
//!
//! Pixel rows are kept as bytes and widened to `f64` on demand, which keeps
//! a 10k-image dataset at 4096 features around 40 MB.

use std::path::Path;

use rayon::prelude::*;

use crate::error::Result;
use crate::imaging::{resize, to_grayscale, Image};
use crate::ingest::Manifest;

pub fn image_features(img: &Image, side: usize) -> Result<Vec<u8>> {
    Ok(resize(&to_grayscale(img), side, side)?.into_data())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub side: usize,
    pub dim: usize,
    pub rows: Vec<u8>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl FeatureSet {
    pub fn from_rows(side: usize, num_classes: usize, rows: Vec<Vec<u8>>, labels: Vec<usize>) -> Self {
        let dim = side * side;
        debug_assert!(rows.iter().all(|r| r.len() == dim));
        Self {
            side,
            dim,
            rows: rows.concat(),
            labels,
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64_into(&self, i: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.row(i).iter().map(|&v| f64::from(v)));
    }
}

/// Loads every record of `manifest` (paths relative to `root`). Row `i`
/// corresponds to record `i`.
pub fn load_features(root: &Path, manifest: &Manifest, side: usize) -> Result<FeatureSet> {
    let rows = manifest
        .records
        .par_iter()
        .map(|r| image_features(&Image::load(&root.join(&r.image_path))?, side))
        .collect::<Result<Vec<_>>>()?;
    let labels = manifest.records.iter().map(|r| r.class_id).collect();
    Ok(FeatureSet::from_rows(side, manifest.num_classes, rows, labels))
}
