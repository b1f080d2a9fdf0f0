//! Ground-truth extraction: foreground bounding boxes, crops, normalised
//! box annotations and the JSONL manifest format shared by every stage.

mod synth;

pub use synth::{generate_synthetic_corpus, shape_family_name, Background, SynthParams, SHAPE_FAMILIES};

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{to_grayscale, Image};

/// Axis-aligned box in pixel coordinates (top-left origin).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl BBox {
    pub fn new(x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self { x0, y0, w, h }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.w > 0 && self.h > 0 && self.x0 + self.w <= width && self.y0 + self.h <= height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && y >= self.y0 && x < self.x0 + self.w && y < self.y0 + self.h
    }

    /// Grows the box by `margin` on every side, clipped to the image.
    pub fn expand(&self, margin: usize, width: usize, height: usize) -> BBox {
        let x0 = self.x0.saturating_sub(margin);
        let y0 = self.y0.saturating_sub(margin);
        let x1 = (self.x0 + self.w + margin).min(width);
        let y1 = (self.y0 + self.h + margin).min(height);
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    GroundTruth,
    Augmented,
    Edge,
    Overlay,
}

/// One labelled image file. `image_path` is relative to the work directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub image_path: String,
    pub class_id: usize,
    pub class_name: String,
    pub bbox: BBox,
    pub provenance: Provenance,
    pub aug_ops: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dataset_id: String,
    pub num_classes: usize,
    pub records: Vec<SampleRecord>,
}

impl Manifest {
    pub fn new(dataset_id: impl Into<String>, num_classes: usize, records: Vec<SampleRecord>) -> Result<Self> {
        let m = Self {
            dataset_id: dataset_id.into(),
            num_classes,
            records,
        };
        m.validate()?;
        Ok(m)
    }

    /// Every label is below `num_classes` and every class is present.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.num_classes];
        for r in &self.records {
            if r.class_id >= self.num_classes {
                return Err(Error::invalid(format!(
                    "{}: class id {} out of range for {} classes",
                    self.dataset_id, r.class_id, self.num_classes
                )));
            }
            seen[r.class_id] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!(
                "{}: class {missing} has no records",
                self.dataset_id
            )));
        }
        Ok(())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for r in &self.records {
            counts[r.class_id] += 1;
        }
        counts
    }

    /// Class names indexed by class id.
    pub fn class_names(&self) -> Vec<String> {
        let mut names: BTreeMap<usize, &str> = BTreeMap::new();
        for r in &self.records {
            names.entry(r.class_id).or_insert(&r.class_name);
        }
        (0..self.num_classes)
            .map(|c| names.get(&c).map(|s| s.to_string()).unwrap_or_default())
            .collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for r in &self.records {
            let line = serde_json::to_string(r).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })?;
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a JSONL manifest; the class count is the largest label plus one.
    pub fn read_jsonl(path: &Path, dataset_id: impl Into<String>) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(
                serde_json::from_str::<SampleRecord>(&line).map_err(|source| Error::Json {
                    path: path.to_path_buf(),
                    source,
                })?,
            );
        }
        let num_classes = records.iter().map(|r| r.class_id + 1).max().unwrap_or(0);
        Manifest::new(dataset_id, num_classes, records)
    }
}

/// Binarises (`gray < threshold` is foreground), labels 8-connected
/// components and returns the largest one's box grown by `margin`.
pub fn extract_foreground_bbox(img: &Image, bin_threshold: u8, margin: usize) -> Result<BBox> {
    let gray = to_grayscale(img);
    let (w, h) = (gray.width(), gray.height());
    let fg: Vec<bool> = gray.data().iter().map(|&v| v < bin_threshold).collect();
    let best = largest_component(&fg, w, h).ok_or(Error::NoObject)?;
    Ok(best.expand(margin, w, h))
}

/// Bounding box of the largest 8-connected component; ties go to the
/// component found first in raster order.
pub(crate) fn largest_component(fg: &[bool], w: usize, h: usize) -> Option<BBox> {
    let mut visited = vec![false; fg.len()];
    let mut stack = Vec::new();
    let mut best: Option<(usize, BBox)> = None;
    for start in 0..fg.len() {
        if !fg[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            size += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if fg[j] && !visited[j] {
                        visited[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if best.map_or(true, |(s, _)| size > s) {
            best = Some((size, BBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1)));
        }
    }
    best.map(|(_, b)| b)
}

pub fn crop(img: &Image, b: BBox) -> Result<Image> {
    if !b.fits(img.width(), img.height()) {
        return Err(Error::invalid(format!(
            "bbox {b:?} exceeds {}x{} image",
            img.width(),
            img.height()
        )));
    }
    let c = img.channels();
    let mut data = Vec::with_capacity(b.w * b.h * c);
    for y in b.y0..b.y0 + b.h {
        let start = (y * img.width() + b.x0) * c;
        data.extend_from_slice(&img.data()[start..start + b.w * c]);
    }
    Image::new(b.w, b.h, c, data)
}

/// Order of the extent fields in an annotation line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldOrder {
    /// `name xc yc h w`
    #[default]
    Paper,
    /// `name xc yc w h`
    Standard,
}

/// One annotation line with centre and extents normalised by image size.
pub fn write_annotation(b: BBox, img_w: usize, img_h: usize, class_name: &str, order: FieldOrder) -> String {
    let (iw, ih) = (img_w as f64, img_h as f64);
    let xc = (b.x0 as f64 + b.w as f64 / 2.0) / iw;
    let yc = (b.y0 as f64 + b.h as f64 / 2.0) / ih;
    let w = b.w as f64 / iw;
    let h = b.h as f64 / ih;
    match order {
        FieldOrder::Paper => format!("{class_name} {xc:.6} {yc:.6} {h:.6} {w:.6}"),
        FieldOrder::Standard => format!("{class_name} {xc:.6} {yc:.6} {w:.6} {h:.6}"),
    }
}

/// Inverse of [`write_annotation`], rounding back to whole pixels.
pub fn parse_annotation(line: &str, img_w: usize, img_h: usize, order: FieldOrder) -> Result<(String, BBox)> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(Error::invalid(format!("annotation needs 5 fields: {line:?}")));
    }
    let nums = fields[1..]
        .iter()
        .map(|s| s.parse::<f64>().map_err(|_| Error::invalid(format!("bad number {s:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let (xc, yc) = (nums[0] * img_w as f64, nums[1] * img_h as f64);
    let (w, h) = match order {
        FieldOrder::Paper => (nums[3] * img_w as f64, nums[2] * img_h as f64),
        FieldOrder::Standard => (nums[2] * img_w as f64, nums[3] * img_h as f64),
    };
    let bbox = BBox::new(
        (xc - w / 2.0).round().max(0.0) as usize,
        (yc - h / 2.0).round().max(0.0) as usize,
        w.round() as usize,
        h.round() as usize,
    );
    Ok((fields[0].to_string(), bbox))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestOptions {
    pub bin_threshold: u8,
    pub margin: usize,
    pub field_order: FieldOrder,
    /// Crop around the box already stored in the record instead of
    /// re-detecting it (cluttered backgrounds defeat the white-background
    /// binarisation).
    pub use_recorded_bbox: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            bin_threshold: 240,
            margin: 5,
            field_order: FieldOrder::Paper,
            use_recorded_bbox: false,
        }
    }
}

fn stem_of(path: &str) -> &str {
    let file = path.rsplit('/').next().unwrap_or(path);
    file.strip_suffix(".png").unwrap_or(file)
}

/// Crops every scene in `raw` to its object and writes the crops under
/// `root/out_subdir/<class>/`, plus a `.txt` annotation beside each scene.
pub fn ingest_corpus(
    raw: &Manifest,
    root: &Path,
    out_subdir: &str,
    dataset_id: &str,
    opts: &IngestOptions,
) -> Result<Manifest> {
    let records = raw
        .records
        .par_iter()
        .map(|rec| {
            let scene_path = root.join(&rec.image_path);
            let scene = Image::load(&scene_path)?;
            let (w, h) = (scene.width(), scene.height());
            let bbox = if opts.use_recorded_bbox {
                rec.bbox.expand(opts.margin, w, h)
            } else {
                extract_foreground_bbox(&scene, opts.bin_threshold, opts.margin).map_err(|e| match e {
                    Error::NoObject => {
                        Error::invalid(format!("no object found in {}", scene_path.display()))
                    }
                    other => other,
                })?
            };
            let crop_img = crop(&scene, bbox)?;
            let rel = format!("{out_subdir}/{}/{}.png", rec.class_name, stem_of(&rec.image_path));
            crop_img.save(&root.join(&rel))?;

            let txt = scene_path.with_extension("txt");
            let line = write_annotation(bbox, w, h, &rec.class_name, opts.field_order);
            fs::write(&txt, format!("{line}\n")).map_err(|e| Error::io(&txt, e))?;

            Ok(SampleRecord {
                image_path: rel,
                class_id: rec.class_id,
                class_name: rec.class_name.clone(),
                bbox,
                provenance: Provenance::GroundTruth,
                aug_ops: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Manifest::new(dataset_id, raw.num_classes, records)
}
