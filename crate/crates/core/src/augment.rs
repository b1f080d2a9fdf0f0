//! Class balancing and the ten augmentation operations.
//!
//! Photometric ops (contrast, noise, brightness, blur) and geometric ops
//! (rotation, random erasing, random cropping, flips, skew) all clamp their
//! output to `[0, 255]` and are pure functions of `(image, spec)`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{clamp_u8, gaussian_blur, resize, Image};
use crate::ingest::{crop, BBox, Manifest, Provenance, SampleRecord};
use crate::seed;

/// Fill used for pixels uncovered by geometric ops.
pub const BACKGROUND: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassBalance {
    pub class_id: usize,
    pub current_count: usize,
    pub balancing_factor: usize,
    pub target_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalancePlan {
    pub classes: Vec<ClassBalance>,
}

impl BalancePlan {
    pub fn target(&self) -> usize {
        self.classes.first().map_or(0, |c| c.target_count)
    }

    pub fn get(&self, class_id: usize) -> Option<&ClassBalance> {
        self.classes.iter().find(|c| c.class_id == class_id)
    }
}

/// Balancing factor `ceil(target / count)` per class. With no explicit
/// target the largest class count is used.
pub fn compute_balance_plan(counts: &BTreeMap<usize, usize>, target: Option<usize>) -> Result<BalancePlan> {
    if counts.is_empty() {
        return Err(Error::invalid("no class counts supplied"));
    }
    if let Some((c, _)) = counts.iter().find(|(_, &n)| n == 0) {
        return Err(Error::invalid(format!("class {c} has no images")));
    }
    let max = *counts.values().max().expect("non-empty");
    let target = target.unwrap_or(max);
    if target < max {
        return Err(Error::invalid(format!(
            "target {target} is below the largest class count {max}"
        )));
    }
    let classes = counts
        .iter()
        .map(|(&class_id, &n)| ClassBalance {
            class_id,
            current_count: n,
            balancing_factor: target.div_ceil(n),
            target_count: target,
        })
        .collect();
    Ok(BalancePlan { classes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugKind {
    Contrast,
    Noise,
    Brightness,
    Blur,
    Rotation,
    RandomErase,
    RandomCrop,
    FlipLr,
    FlipTb,
    Skew,
}

impl AugKind {
    pub const ALL: [AugKind; 10] = [
        AugKind::Contrast,
        AugKind::Noise,
        AugKind::Brightness,
        AugKind::Blur,
        AugKind::Rotation,
        AugKind::RandomErase,
        AugKind::RandomCrop,
        AugKind::FlipLr,
        AugKind::FlipTb,
        AugKind::Skew,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugKind::Contrast => "contrast",
            AugKind::Noise => "noise",
            AugKind::Brightness => "brightness",
            AugKind::Blur => "blur",
            AugKind::Rotation => "rotation",
            AugKind::RandomErase => "random_erase",
            AugKind::RandomCrop => "random_crop",
            AugKind::FlipLr => "flip_lr",
            AugKind::FlipTb => "flip_tb",
            AugKind::Skew => "skew",
        }
    }
}

impl fmt::Display for AugKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown augmentation {s:?}")))
    }
}

/// A fully parameterised augmentation. Randomised placement (noise field,
/// erase and crop position) is drawn from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugOpSpec {
    pub op: AugOp,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugOp {
    Contrast { factor: f64 },
    Noise { sigma: f64 },
    Brightness { factor: f64 },
    Blur { sigma: f64 },
    Rotation { degrees: f64 },
    /// Erased fraction of the image area, at most 0.2.
    RandomErase { fraction: f64 },
    /// Retained fraction of the image area, at least 0.8.
    RandomCrop { keep: f64 },
    FlipLr,
    FlipTb,
    Skew { shear: f64 },
}

impl AugOp {
    pub fn kind(&self) -> AugKind {
        match self {
            AugOp::Contrast { .. } => AugKind::Contrast,
            AugOp::Noise { .. } => AugKind::Noise,
            AugOp::Brightness { .. } => AugKind::Brightness,
            AugOp::Blur { .. } => AugKind::Blur,
            AugOp::Rotation { .. } => AugKind::Rotation,
            AugOp::RandomErase { .. } => AugKind::RandomErase,
            AugOp::RandomCrop { .. } => AugKind::RandomCrop,
            AugOp::FlipLr => AugKind::FlipLr,
            AugOp::FlipTb => AugKind::FlipTb,
            AugOp::Skew { .. } => AugKind::Skew,
        }
    }

    /// Checks the parameter against the legal range for its kind.
    pub fn validate(&self) -> Result<()> {
        let (value, lo, hi, lo_open) = match *self {
            AugOp::Contrast { factor } => (factor, 0.7, 1.3, false),
            AugOp::Brightness { factor } => (factor, 0.6, 1.4, false),
            AugOp::Noise { sigma } => (sigma, 0.0, 25.0, true),
            AugOp::Blur { sigma } => (sigma, 0.5, 1.5, false),
            AugOp::Rotation { degrees } => (degrees, -45.0, 45.0, false),
            AugOp::RandomErase { fraction } => (fraction, 0.0, 0.2, true),
            AugOp::RandomCrop { keep } => (keep, 0.8, 1.0, false),
            AugOp::Skew { shear } => (shear, -0.3, 0.3, false),
            AugOp::FlipLr | AugOp::FlipTb => return Ok(()),
        };
        let low_ok = if lo_open { value > lo } else { value >= lo };
        if value.is_finite() && low_ok && value <= hi {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "{} parameter {value} outside {}{lo}, {hi}]",
                self.kind(),
                if lo_open { "(" } else { "[" }
            )))
        }
    }
}

/// Sampling ranges for randomly drawn augmentations. Every range must sit
/// inside the legal range checked by [`AugOp::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugRanges {
    pub contrast: (f64, f64),
    pub brightness: (f64, f64),
    pub noise_sigma: (f64, f64),
    pub blur_sigma: (f64, f64),
    pub rotation_deg: f64,
    pub erase_fraction: (f64, f64),
    pub crop_keep: (f64, f64),
    pub skew: f64,
}

impl Default for AugRanges {
    fn default() -> Self {
        Self {
            contrast: (0.7, 1.3),
            brightness: (0.6, 1.4),
            noise_sigma: (2.0, 25.0),
            blur_sigma: (0.5, 1.5),
            rotation_deg: 45.0,
            erase_fraction: (0.05, 0.2),
            crop_keep: (0.8, 1.0),
            skew: 0.3,
        }
    }
}

impl AugRanges {
    pub fn sample(&self, kind: AugKind, rng: &mut impl Rng) -> AugOp {
        let mut between = |(lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..=hi) } else { lo };
        match kind {
            AugKind::Contrast => AugOp::Contrast {
                factor: between(self.contrast),
            },
            AugKind::Brightness => AugOp::Brightness {
                factor: between(self.brightness),
            },
            AugKind::Noise => AugOp::Noise {
                sigma: between(self.noise_sigma),
            },
            AugKind::Blur => AugOp::Blur {
                sigma: between(self.blur_sigma),
            },
            AugKind::Rotation => AugOp::Rotation {
                degrees: between((-self.rotation_deg, self.rotation_deg)),
            },
            AugKind::RandomErase => AugOp::RandomErase {
                fraction: between(self.erase_fraction),
            },
            AugKind::RandomCrop => AugOp::RandomCrop {
                keep: between(self.crop_keep),
            },
            AugKind::FlipLr => AugOp::FlipLr,
            AugKind::FlipTb => AugOp::FlipTb,
            AugKind::Skew => AugOp::Skew {
                shear: between((-self.skew, self.skew)),
            },
        }
    }

    /// Validates by sampling both ends of every range.
    pub fn validate(&self) -> Result<()> {
        let ends = |r: (f64, f64)| [r.0, r.1];
        let mut ops = Vec::new();
        for f in ends(self.contrast) {
            ops.push(AugOp::Contrast { factor: f });
        }
        for f in ends(self.brightness) {
            ops.push(AugOp::Brightness { factor: f });
        }
        for s in ends(self.noise_sigma) {
            ops.push(AugOp::Noise { sigma: s });
        }
        for s in ends(self.blur_sigma) {
            ops.push(AugOp::Blur { sigma: s });
        }
        ops.push(AugOp::Rotation {
            degrees: self.rotation_deg,
        });
        for f in ends(self.erase_fraction) {
            ops.push(AugOp::RandomErase { fraction: f });
        }
        for k in ends(self.crop_keep) {
            ops.push(AugOp::RandomCrop { keep: k });
        }
        ops.push(AugOp::Skew { shear: self.skew });
        ops.iter().try_for_each(AugOp::validate)
    }
}

fn map_pixels(img: &Image, f: impl Fn(f64) -> f64) -> Image {
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = clamp_u8(f(f64::from(*v)));
    }
    out
}

/// Bilinear sample at a real position; outside the image yields `fill`.
fn sample_bilinear(img: &Image, x: f64, y: f64, ch: usize, fill: f64) -> f64 {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let x0 = x.floor() as isize;
    let y0 = y.floor() as isize;
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let c = img.channels();
    let at = |xx: isize, yy: isize| {
        if xx < 0 || yy < 0 || xx >= w || yy >= h {
            fill
        } else {
            f64::from(img.data()[(yy as usize * w as usize + xx as usize) * c + ch])
        }
    };
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
    let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Inverse-maps every output pixel through `src_of(x, y)`.
fn warp(img: &Image, src_of: impl Fn(f64, f64) -> (f64, f64)) -> Image {
    let c = img.channels();
    let mut data = Vec::with_capacity(img.data().len());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (sx, sy) = src_of(x as f64, y as f64);
            for ch in 0..c {
                data.push(clamp_u8(sample_bilinear(img, sx, sy, ch, f64::from(BACKGROUND))));
            }
        }
    }
    Image::new(img.width(), img.height(), c, data).expect("same dims")
}

pub fn flip_lr(img: &Image) -> Image {
    let mut out = img.clone();
    let w = img.width();
    for y in 0..img.height() {
        for x in 0..w {
            out.pixel_mut(x, y).copy_from_slice(img.pixel(w - 1 - x, y));
        }
    }
    out
}

pub fn flip_tb(img: &Image) -> Image {
    let mut out = img.clone();
    let h = img.height();
    for y in 0..h {
        for x in 0..img.width() {
            out.pixel_mut(x, y).copy_from_slice(img.pixel(x, h - 1 - y));
        }
    }
    out
}

/// Rectangle erased by `RandomErase` for the given seed.
pub fn erase_rect(width: usize, height: usize, fraction: f64, seed: u64) -> BBox {
    let mut rng = seed::stream(seed, "erase", 0, 0);
    let budget = (fraction * (width * height) as f64).floor() as usize;
    if budget == 0 {
        return BBox::new(0, 0, 0, 0);
    }
    let aspect: f64 = rng.random_range(0.5..=2.0);
    let rw = (((budget as f64) * aspect).sqrt().floor() as usize).clamp(1, width);
    let rh = (budget / rw).clamp(1, height);
    let x0 = rng.random_range(0..=width - rw);
    let y0 = rng.random_range(0..=height - rh);
    BBox::new(x0, y0, rw, rh)
}

/// Region retained by `RandomCrop` for the given seed.
pub fn crop_rect(width: usize, height: usize, keep: f64, seed: u64) -> BBox {
    let mut rng = seed::stream(seed, "crop", 0, 0);
    let side = keep.sqrt();
    let mut cw = ((width as f64 * side).ceil() as usize).clamp(1, width);
    let mut ch = ((height as f64 * side).ceil() as usize).clamp(1, height);
    while ((cw * ch) as f64) < keep * (width * height) as f64 {
        if cw < width {
            cw += 1;
        } else {
            ch += 1;
        }
    }
    let x0 = rng.random_range(0..=width - cw);
    let y0 = rng.random_range(0..=height - ch);
    BBox::new(x0, y0, cw, ch)
}

pub fn apply_augmentation(img: &Image, spec: &AugOpSpec) -> Result<Image> {
    spec.op.validate()?;
    let (w, h) = (img.width(), img.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let out = match spec.op {
        AugOp::Contrast { factor } => map_pixels(img, |p| (p - 128.0) * factor + 128.0),
        AugOp::Brightness { factor } => map_pixels(img, |p| p * factor),
        AugOp::Noise { sigma } => {
            let mut rng: ChaCha8Rng = seed::stream(spec.seed, "noise", 0, 0);
            let normal = Normal::new(0.0, sigma).expect("sigma validated");
            let mut out = img.clone();
            for v in out.data_mut() {
                *v = clamp_u8(f64::from(*v) + normal.sample(&mut rng));
            }
            out
        }
        AugOp::Blur { sigma } => gaussian_blur(img, sigma)?,
        AugOp::Rotation { degrees } => {
            let (sin, cos) = degrees.to_radians().sin_cos();
            warp(img, |x, y| {
                let (dx, dy) = (x - cx, y - cy);
                (cos * dx + sin * dy + cx, -sin * dx + cos * dy + cy)
            })
        }
        AugOp::Skew { shear } => warp(img, |x, y| (x - shear * (y - cy), y)),
        AugOp::RandomErase { fraction } => {
            let r = erase_rect(w, h, fraction, spec.seed);
            let mut out = img.clone();
            for y in r.y0..r.y0 + r.h {
                for x in r.x0..r.x0 + r.w {
                    out.pixel_mut(x, y).fill(BACKGROUND);
                }
            }
            out
        }
        AugOp::RandomCrop { keep } => resize(&crop(img, crop_rect(w, h, keep, spec.seed))?, w, h)?,
        AugOp::FlipLr => flip_lr(img),
        AugOp::FlipTb => flip_tb(img),
    };
    Ok(out)
}

/// Applies a chain of ops in order.
pub fn apply_chain(img: &Image, specs: &[AugOpSpec]) -> Result<Image> {
    specs
        .iter()
        .try_fold(img.clone(), |acc, s| apply_augmentation(&acc, s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Per-class target count; `None` balances up to the largest class.
    pub target: Option<usize>,
    pub op_mix: Vec<AugKind>,
    /// Maximum number of distinct ops chained on one augmented image.
    pub max_ops_per_image: usize,
    pub ranges: AugRanges,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            target: None,
            op_mix: AugKind::ALL.to_vec(),
            max_ops_per_image: 1,
            ranges: AugRanges::default(),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.op_mix.is_empty() {
            return Err(Error::invalid("op_mix is empty"));
        }
        if self.max_ops_per_image == 0 {
            return Err(Error::invalid("max_ops_per_image must be >= 1"));
        }
        self.ranges.validate()
    }
}

/// Draws the op chain for augmented copy `index` of `source`.
pub fn sample_chain(cfg: &AugmentConfig, seed: u64, source: usize, index: usize) -> Vec<AugOpSpec> {
    let mut rng = seed::stream(seed, "augment", source as u64, index as u64);
    let count = rng.random_range(1..=cfg.max_ops_per_image.min(cfg.op_mix.len()));
    let mut kinds: Vec<AugKind> = Vec::with_capacity(count);
    while kinds.len() < count {
        let k = *cfg.op_mix.choose(&mut rng).expect("op_mix non-empty");
        if !kinds.contains(&k) {
            kinds.push(k);
        }
    }
    kinds
        .into_iter()
        .map(|k| AugOpSpec {
            op: cfg.ranges.sample(k, &mut rng),
            seed: rng.random(),
        })
        .collect()
}

fn stem_of(path: &str) -> &str {
    let file = path.rsplit('/').next().unwrap_or(path);
    file.strip_suffix(".png").unwrap_or(file)
}

/// Brings every class to the plan's target: originals are kept and the
/// shortfall is filled round-robin over the class's sources with augmented
/// copies written under `root/out_subdir/<class>/`. Records are ordered by
/// source path, then augmentation index.
pub fn run_balance_augment(
    manifest: &Manifest,
    plan: &BalancePlan,
    cfg: &AugmentConfig,
    seed: u64,
    root: &Path,
    out_subdir: &str,
    dataset_id: &str,
) -> Result<Manifest> {
    cfg.validate()?;
    let mut by_class: BTreeMap<usize, Vec<&SampleRecord>> = BTreeMap::new();
    for r in &manifest.records {
        by_class.entry(r.class_id).or_default().push(r);
    }

    // (source record, augmentation index) jobs, 0 = the original.
    let mut jobs: Vec<(&SampleRecord, usize)> = Vec::new();
    for (class_id, sources) in by_class.iter_mut() {
        let entry = plan
            .get(*class_id)
            .ok_or_else(|| Error::invalid(format!("balance plan does not cover class {class_id}")))?;
        sources.sort_by(|a, b| a.image_path.cmp(&b.image_path));
        let n = sources.len();
        let extra = entry.target_count.saturating_sub(n);
        for (i, src) in sources.iter().enumerate() {
            let copies = extra / n + usize::from(i < extra % n);
            for k in 0..=copies {
                jobs.push((src, k));
            }
        }
    }
    jobs.sort_by(|a, b| a.0.image_path.cmp(&b.0.image_path).then(a.1.cmp(&b.1)));

    let source_ids: BTreeMap<&str, usize> = manifest
        .records
        .iter()
        .map(|r| r.image_path.as_str())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, p)| (p, i))
        .collect();

    let records = jobs
        .par_iter()
        .map(|&(src, k)| {
            if k == 0 {
                return Ok(src.clone());
            }
            let chain = sample_chain(cfg, seed, source_ids[src.image_path.as_str()], k);
            let img = Image::load(&root.join(&src.image_path))?;
            let out = apply_chain(&img, &chain)?;
            let rel = format!("{out_subdir}/{}/{}_aug{k:03}.png", src.class_name, stem_of(&src.image_path));
            out.save(&root.join(&rel))?;
            let mut aug_ops = src.aug_ops.clone();
            aug_ops.extend(chain.iter().map(|s| s.op.kind().name().to_string()));
            Ok(SampleRecord {
                image_path: rel,
                class_id: src.class_id,
                class_name: src.class_name.clone(),
                bbox: src.bbox,
                provenance: Provenance::Augmented,
                aug_ops,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Manifest::new(dataset_id, manifest.num_classes, records)
}
