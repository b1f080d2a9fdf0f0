//! The fifteen dataset variants: the base RGB corpus, seven edge-mask
//! datasets (three detectors and their four unions) and seven RGB images
//! with those masks painted on.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edges::{canny, combine, import_edges, overlay, prewitt, thick_edge, EdgeMask, EdgeParams};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::ingest::{Manifest, Provenance, SampleRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    Canny,
    Hed,
    Prewitt,
}

impl Detector {
    pub fn name(self) -> &'static str {
        match self {
            Detector::Canny => "canny",
            Detector::Hed => "hed",
            Detector::Prewitt => "prewitt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantId {
    BaseRgb,
    Canny,
    Hed,
    Prewitt,
    CannyHed,
    HedPrewitt,
    CannyPrewitt,
    AllEdges,
    RgbCanny,
    RgbHed,
    RgbPrewitt,
    RgbCannyHed,
    RgbHedPrewitt,
    RgbCannyPrewitt,
    RgbAllEdges,
}

impl VariantId {
    pub const ALL: [VariantId; 15] = [
        VariantId::BaseRgb,
        VariantId::Canny,
        VariantId::Hed,
        VariantId::Prewitt,
        VariantId::CannyHed,
        VariantId::HedPrewitt,
        VariantId::CannyPrewitt,
        VariantId::AllEdges,
        VariantId::RgbCanny,
        VariantId::RgbHed,
        VariantId::RgbPrewitt,
        VariantId::RgbCannyHed,
        VariantId::RgbHedPrewitt,
        VariantId::RgbCannyPrewitt,
        VariantId::RgbAllEdges,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantId::BaseRgb => "base_rgb",
            VariantId::Canny => "canny",
            VariantId::Hed => "hed",
            VariantId::Prewitt => "prewitt",
            VariantId::CannyHed => "canny_hed",
            VariantId::HedPrewitt => "hed_prewitt",
            VariantId::CannyPrewitt => "canny_prewitt",
            VariantId::AllEdges => "all_edges",
            VariantId::RgbCanny => "rgb_canny",
            VariantId::RgbHed => "rgb_hed",
            VariantId::RgbPrewitt => "rgb_prewitt",
            VariantId::RgbCannyHed => "rgb_canny_hed",
            VariantId::RgbHedPrewitt => "rgb_hed_prewitt",
            VariantId::RgbCannyPrewitt => "rgb_canny_prewitt",
            VariantId::RgbAllEdges => "rgb_all_edges",
        }
    }
}

impl fmt::Display for VariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantId::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown dataset variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub id: VariantId,
    pub detectors: Vec<Detector>,
    pub overlay: bool,
}

impl VariantSpec {
    pub fn for_id(id: VariantId) -> Self {
        use Detector::*;
        let name = id.name();
        let overlay = name.starts_with("rgb_");
        let detectors = match name.trim_start_matches("rgb_") {
            "base_rgb" => vec![],
            "canny" => vec![Canny],
            "hed" => vec![Hed],
            "prewitt" => vec![Prewitt],
            "canny_hed" => vec![Canny, Hed],
            "hed_prewitt" => vec![Hed, Prewitt],
            "canny_prewitt" => vec![Canny, Prewitt],
            "all_edges" => vec![Canny, Hed, Prewitt],
            other => unreachable!("variant {other}"),
        };
        Self { id, detectors, overlay }
    }
}

/// All fifteen variants in a stable order.
pub fn enumerate_variants() -> Vec<VariantSpec> {
    VariantId::ALL.into_iter().map(VariantSpec::for_id).collect()
}

/// Where HED-slot masks come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HedSource {
    /// Thresholded gradient dilated into thick outlines.
    ThickProxy,
    /// Precomputed maps at `<root>/edges/hed/<image_path>`.
    Import { root: PathBuf },
}

impl HedSource {
    pub fn label(&self) -> &'static str {
        match self {
            HedSource::ThickProxy => "thick_edge_proxy",
            HedSource::Import { .. } => "imported",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantParams {
    pub edges: EdgeParams,
    pub hed: HedSource,
    pub overlay_color: [u8; 3],
}

impl Default for VariantParams {
    fn default() -> Self {
        Self {
            edges: EdgeParams::default(),
            hed: HedSource::ThickProxy,
            overlay_color: [0, 0, 0],
        }
    }
}

fn detect(img: &Image, detector: Detector, params: &VariantParams, rel_path: Option<&str>) -> Result<EdgeMask> {
    match detector {
        Detector::Canny => canny(img, &params.edges),
        Detector::Prewitt => Ok(prewitt(img, &params.edges)),
        Detector::Hed => match (&params.hed, rel_path) {
            (HedSource::Import { root }, Some(rel)) => {
                import_edges(&root.join("edges").join("hed").join(rel), (img.width(), img.height()))
            }
            _ => Ok(thick_edge(img, &params.edges)),
        },
    }
}

/// Union of the variant's detector masks, or `None` for `base_rgb`.
pub fn variant_mask(img: &Image, spec: &VariantSpec, params: &VariantParams, rel_path: Option<&str>) -> Result<Option<EdgeMask>> {
    let masks = spec
        .detectors
        .iter()
        .map(|&d| detect(img, d, params, rel_path))
        .collect::<Result<Vec<_>>>()?;
    match masks.len() {
        0 => Ok(None),
        1 => Ok(masks.into_iter().next()),
        _ => combine(&masks.iter().collect::<Vec<_>>()).map(Some),
    }
}

/// Renders one image as it appears in the given variant. `rel_path` locates
/// imported HED maps; without it the proxy is used.
pub fn render_variant(img: &Image, spec: &VariantSpec, params: &VariantParams, rel_path: Option<&str>) -> Result<Image> {
    match variant_mask(img, spec, params, rel_path)? {
        None => Ok(img.clone()),
        Some(mask) if spec.overlay => {
            let rgb = if img.channels() == 3 {
                img.clone()
            } else {
                let mut data = Vec::with_capacity(img.data().len() * 3);
                for &v in img.data() {
                    data.extend_from_slice(&[v, v, v]);
                }
                Image::new(img.width(), img.height(), 3, data)?
            };
            overlay(&rgb, &mask, params.overlay_color)
        }
        Some(mask) => Ok(mask.to_image()),
    }
}

fn basename(path: &str) -> &str {
    path.rsplit('/').next().unwrap_or(path)
}

/// Materialises one variant under `root/out_subdir/<id>/<class>/<basename>`
/// and writes its `manifest.jsonl`. Record order and labels are preserved.
pub fn build_variant(
    src: &Manifest,
    spec: &VariantSpec,
    params: &VariantParams,
    root: &Path,
    out_subdir: &str,
) -> Result<Manifest> {
    params.edges.validate()?;
    let records = src
        .records
        .par_iter()
        .map(|rec| {
            let src_path = root.join(&rec.image_path);
            if !src_path.exists() {
                return Err(Error::io(
                    &src_path,
                    std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        format!("source image for record {:?} is missing", rec.image_path),
                    ),
                ));
            }
            let rel = format!("{out_subdir}/{}/{}/{}", spec.id, rec.class_name, basename(&rec.image_path));
            let dst = root.join(&rel);
            let provenance = if spec.detectors.is_empty() {
                // Copy bytes verbatim.
                if let Some(parent) = dst.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                std::fs::copy(&src_path, &dst).map_err(|e| Error::io(&dst, e))?;
                rec.provenance
            } else {
                let img = Image::load(&src_path)?;
                render_variant(&img, spec, params, Some(&rec.image_path))?.save(&dst)?;
                if spec.overlay {
                    Provenance::Overlay
                } else {
                    Provenance::Edge
                }
            };
            Ok(SampleRecord {
                image_path: rel,
                provenance,
                ..rec.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest::new(spec.id.name(), src.num_classes, records)?;
    manifest.write_jsonl(&root.join(out_subdir).join(spec.id.name()).join("manifest.jsonl"))?;
    Ok(manifest)
}
