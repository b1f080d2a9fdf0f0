//! Synthetic textureless corpus: one silhouette family per class, rendered
//! with a uniform gray fill at several base orientations.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BBox, Manifest, Provenance, SampleRecord};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    #[default]
    White,
    /// Smooth coloured clutter, standing in for photographs taken against
    /// arbitrary backgrounds.
    Textured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub num_classes: usize,
    pub per_class: usize,
    pub orientations: usize,
    pub background: Background,
    /// Side of the square scene in pixels.
    pub scene_size: usize,
    pub seed: u64,
    /// Angular step between base orientations, in degrees.
    pub orientation_step_deg: f64,
    /// Uniform rotation jitter added to each base orientation.
    pub jitter_deg: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            num_classes: 10,
            per_class: 200,
            orientations: 4,
            background: Background::White,
            scene_size: 128,
            seed: 7,
            orientation_step_deg: 20.0,
            jitter_deg: 5.0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > SHAPE_FAMILIES.len() {
            return Err(Error::invalid(format!(
                "num_classes must lie in 2..={}, got {}",
                SHAPE_FAMILIES.len(),
                self.num_classes
            )));
        }
        if self.orientations == 0 || self.per_class < self.orientations {
            return Err(Error::invalid(format!(
                "per_class ({}) must be >= orientations ({}) >= 1",
                self.per_class, self.orientations
            )));
        }
        if self.scene_size < 32 {
            return Err(Error::invalid(format!(
                "scene_size must be >= 32, got {}",
                self.scene_size
            )));
        }
        Ok(())
    }
}

/// Shape primitive in the unit square `[-1, 1]^2`.
#[derive(Debug, Clone, Copy)]
enum Prim {
    Disk { cx: f64, cy: f64, r: f64 },
    Ellipse { rx: f64, ry: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    /// Regular polygon (or star when `inner < 1`) centred at the origin.
    Star { points: usize, outer: f64, inner: f64, phase: f64 },
    Tri { a: (f64, f64), b: (f64, f64), c: (f64, f64) },
}

impl Prim {
    fn contains(&self, u: f64, v: f64) -> bool {
        match *self {
            Prim::Disk { cx, cy, r } => (u - cx).powi(2) + (v - cy).powi(2) <= r * r,
            Prim::Ellipse { rx, ry } => (u / rx).powi(2) + (v / ry).powi(2) <= 1.0,
            Prim::Rect { x0, y0, x1, y1 } => u >= x0 && u <= x1 && v >= y0 && v <= y1,
            Prim::Star {
                points,
                outer,
                inner,
                phase,
            } => {
                let r = u.hypot(v);
                if r > outer {
                    return false;
                }
                let sector = 2.0 * PI / points as f64;
                let half = sector / 2.0;
                let theta = (v.atan2(u) - phase).rem_euclid(sector);
                // Fold so that 0 is a tip and `half` is a notch.
                let phi = theta.min(sector - theta);
                let notch_r = if inner >= 1.0 { outer * half.cos() } else { outer * inner };
                let tip = (outer, 0.0);
                let notch = (notch_r * half.cos(), notch_r * half.sin());
                let p = (r * phi.cos(), r * phi.sin());
                let side = |q: (f64, f64)| {
                    (notch.0 - tip.0) * (q.1 - tip.1) - (notch.1 - tip.1) * (q.0 - tip.0)
                };
                side(p) * side((0.0, 0.0)) >= 0.0
            }
            Prim::Tri { a, b, c } => {
                let s = |p: (f64, f64), q: (f64, f64)| (q.0 - p.0) * (v - p.1) - (q.1 - p.1) * (u - p.0);
                let (d1, d2, d3) = (s(a, b), s(b, c), s(c, a));
                let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(neg && pos)
            }
        }
    }
}

struct Shape {
    add: Vec<Prim>,
    sub: Vec<Prim>,
}

impl Shape {
    fn contains(&self, u: f64, v: f64) -> bool {
        self.add.iter().any(|p| p.contains(u, v)) && !self.sub.iter().any(|p| p.contains(u, v))
    }
}

/// Names of the available silhouette families, in class-id order. The first
/// ten are the ones a pixel-level linear model separates best under the
/// default augmentation.
pub const SHAPE_FAMILIES: [&str; 30] = [
    "ring",
    "star5",
    "crescent",
    "frame",
    "dumbbell",
    "holed_square",
    "trapezoid",
    "t_block",
    "gear",
    "slotted_disk",
    "disk",
    "triangle",
    "cross",
    "l_block",
    "slotted_bar",
    "square",
    "pentagon",
    "hexagon",
    "thin_ring",
    "star4",
    "half_disk",
    "u_block",
    "holed_diamond",
    "star6",
    "long_ellipse",
    "octagon",
    "h_block",
    "arrow",
    "keyhole",
    "chevron",
];

pub fn shape_family_name(class_id: usize) -> &'static str {
    SHAPE_FAMILIES[class_id]
}

fn shape_for(class_id: usize) -> Shape {
    use Prim::*;
    let poly = |points, phase| Star {
        points,
        outer: 1.0,
        inner: 1.0,
        phase,
    };
    let (add, sub): (Vec<Prim>, Vec<Prim>) = match SHAPE_FAMILIES[class_id] {
        "disk" => (vec![Disk { cx: 0., cy: 0., r: 1. }], vec![]),
        "triangle" => (vec![poly(3, -PI / 2.)], vec![]),
        "ring" => (vec![Disk { cx: 0., cy: 0., r: 1. }], vec![Disk { cx: 0., cy: 0., r: 0.55 }]),
        "cross" => (
            vec![
                Rect { x0: -1., y0: -0.28, x1: 1., y1: 0.28 },
                Rect { x0: -0.28, y0: -1., x1: 0.28, y1: 1. },
            ],
            vec![],
        ),
        "star5" => (
            vec![Star { points: 5, outer: 1., inner: 0.45, phase: -PI / 2. }],
            vec![],
        ),
        "l_block" => (
            vec![
                Rect { x0: -0.8, y0: -1., x1: -0.2, y1: 1. },
                Rect { x0: -0.8, y0: 0.4, x1: 0.8, y1: 1. },
            ],
            vec![],
        ),
        "slotted_bar" => (
            vec![Rect { x0: -1., y0: -0.5, x1: 1., y1: 0.5 }],
            vec![Rect { x0: -0.6, y0: -0.12, x1: 0.6, y1: 0.12 }],
        ),
        "crescent" => (
            vec![Disk { cx: 0., cy: 0., r: 1. }],
            vec![Disk { cx: 0.45, cy: -0.2, r: 0.8 }],
        ),
        "frame" => (
            vec![Rect { x0: -1., y0: -1., x1: 1., y1: 1. }],
            vec![Rect { x0: -0.6, y0: -0.6, x1: 0.6, y1: 0.6 }],
        ),
        "dumbbell" => (
            vec![
                Disk { cx: -0.6, cy: 0., r: 0.4 },
                Disk { cx: 0.6, cy: 0., r: 0.4 },
                Rect { x0: -0.6, y0: -0.12, x1: 0.6, y1: 0.12 },
            ],
            vec![],
        ),
        "square" => (vec![Rect { x0: -0.9, y0: -0.9, x1: 0.9, y1: 0.9 }], vec![]),
        "pentagon" => (vec![poly(5, -PI / 2.)], vec![]),
        "hexagon" => (vec![poly(6, 0.)], vec![]),
        "thin_ring" => (vec![Disk { cx: 0., cy: 0., r: 1. }], vec![Disk { cx: 0., cy: 0., r: 0.8 }]),
        "holed_square" => (
            vec![Rect { x0: -0.9, y0: -0.9, x1: 0.9, y1: 0.9 }],
            vec![Disk { cx: 0., cy: 0., r: 0.4 }],
        ),
        "star4" => (
            vec![Star { points: 4, outer: 1., inner: 0.35, phase: 0. }],
            vec![],
        ),
        "half_disk" => (
            vec![Disk { cx: 0., cy: 0.35, r: 1. }],
            vec![Rect { x0: -1., y0: 0.35, x1: 1., y1: 1.5 }],
        ),
        "trapezoid" => (
            vec![
                Tri { a: (-1., 0.6), b: (1., 0.6), c: (0.5, -0.6) },
                Tri { a: (-1., 0.6), b: (0.5, -0.6), c: (-0.5, -0.6) },
            ],
            vec![],
        ),
        "u_block" => (
            vec![Rect { x0: -0.9, y0: -0.9, x1: 0.9, y1: 0.9 }],
            vec![Rect { x0: -0.4, y0: -1., x1: 0.4, y1: 0.4 }],
        ),
        "holed_diamond" => (vec![poly(4, 0.)], vec![Rect { x0: -0.25, y0: -0.25, x1: 0.25, y1: 0.25 }]),
        "star6" => (
            vec![Star { points: 6, outer: 1., inner: 0.6, phase: 0. }],
            vec![],
        ),
        "long_ellipse" => (vec![Ellipse { rx: 1., ry: 0.35 }], vec![]),
        "octagon" => (vec![poly(8, PI / 8.)], vec![]),
        "h_block" => (
            vec![
                Rect { x0: -0.9, y0: -0.9, x1: -0.4, y1: 0.9 },
                Rect { x0: 0.4, y0: -0.9, x1: 0.9, y1: 0.9 },
                Rect { x0: -0.9, y0: -0.2, x1: 0.9, y1: 0.2 },
            ],
            vec![],
        ),
        "t_block" => (
            vec![
                Rect { x0: -0.9, y0: -0.9, x1: 0.9, y1: -0.4 },
                Rect { x0: -0.25, y0: -0.9, x1: 0.25, y1: 0.9 },
            ],
            vec![],
        ),
        "arrow" => (
            vec![
                Tri { a: (0.1, -0.8), b: (0.1, 0.8), c: (1., 0.) },
                Rect { x0: -1., y0: -0.25, x1: 0.1, y1: 0.25 },
            ],
            vec![],
        ),
        "gear" => (
            vec![
                Disk { cx: 0., cy: 0., r: 0.75 },
                Star { points: 8, outer: 1., inner: 0.7, phase: 0. },
            ],
            vec![Disk { cx: 0., cy: 0., r: 0.25 }],
        ),
        "slotted_disk" => (
            vec![Disk { cx: 0., cy: 0., r: 1. }],
            vec![Rect { x0: -0.15, y0: -1., x1: 0.15, y1: 0.2 }],
        ),
        "keyhole" => (
            vec![Rect { x0: -0.8, y0: -1., x1: 0.8, y1: 1. }],
            vec![
                Disk { cx: 0., cy: -0.25, r: 0.3 },
                Tri { a: (0., -0.2), b: (-0.25, 0.65), c: (0.25, 0.65) },
            ],
        ),
        "chevron" => (
            vec![
                Tri { a: (-1., -0.9), b: (1., 0.), c: (-1., 0.9) },
            ],
            vec![Tri { a: (-1., -0.45), b: (0.1, 0.), c: (-1., 0.45) }],
        ),
        other => unreachable!("unknown family {other}"),
    };
    Shape { add, sub }
}

const SUPERSAMPLE: usize = 4;

/// Renders one scene and returns it with the tight box around the object.
fn render_scene(params: &SynthParams, class_id: usize, index: usize) -> (Image, BBox) {
    let mut rng = seed::stream(params.seed, "synth", class_id as u64, index as u64);
    let n = params.scene_size as f64;
    let orientation = (index % params.orientations) as f64;
    let angle = (orientation * params.orientation_step_deg
        + rng.random_range(-params.jitter_deg..=params.jitter_deg))
    .to_radians();
    let radius = n * rng.random_range(0.26..0.34);
    let aspect = rng.random_range(0.92..1.08);
    let (rx, ry) = (radius * aspect, radius / aspect);
    let slack = n / 2.0 - radius * 1.1 - 2.0;
    let cx = n / 2.0 + rng.random_range(-slack..=slack) * 0.5;
    let cy = n / 2.0 + rng.random_range(-slack..=slack) * 0.5;
    let fill = f64::from(rng.random_range(115u8..=145));
    let (sin, cos) = angle.sin_cos();

    let background = match params.background {
        Background::White => None,
        Background::Textured => Some(Clutter::sample(&mut rng, params.scene_size)),
    };

    let shape = shape_for(class_id);
    let size = params.scene_size;
    let mut data = Vec::with_capacity(size * size * 3);
    let (mut x0, mut y0, mut x1, mut y1) = (size, size, 0, 0);
    let step = 1.0 / SUPERSAMPLE as f64;
    for y in 0..size {
        for x in 0..size {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) * step - cx;
                    let py = y as f64 + (sy as f64 + 0.5) * step - cy;
                    // Inverse rotation into the shape frame.
                    let u = (cos * px + sin * py) / rx;
                    let v = (-sin * px + cos * py) / ry;
                    if u.abs() <= 1.2 && v.abs() <= 1.2 && shape.contains(u, v) {
                        hits += 1;
                    }
                }
            }
            let alpha = hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
            if alpha >= 0.5 {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
            let bg = match &background {
                None => [255.0; 3],
                Some(c) => c.at(x, y),
            };
            for b in bg {
                data.push((b * (1.0 - alpha) + fill * alpha).round().clamp(0.0, 255.0) as u8);
            }
        }
    }

    if background.is_none() {
        // Sparse sensor speckle; the foreground extractor keeps the largest blob.
        for _ in 0..rng.random_range(0..=3) {
            let (sx, sy) = (rng.random_range(0..size), rng.random_range(0..size));
            let i = (sy * size + sx) * 3;
            if data[i] == 255 {
                data[i..i + 3].copy_from_slice(&[200, 200, 200]);
            }
        }
    }

    let img = Image::new(size, size, 3, data).expect("scene buffer");
    let bbox = if x1 >= x0 && y1 >= y0 {
        BBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1)
    } else {
        BBox::full(size, size)
    };
    (img, bbox)
}

/// Low-frequency coloured pattern plus a few flat rectangles.
struct Clutter {
    base: [f64; 3],
    waves: Vec<(f64, f64, f64, [f64; 3])>,
    patches: Vec<(usize, usize, usize, usize, [f64; 3])>,
}

impl Clutter {
    fn sample(rng: &mut impl Rng, size: usize) -> Self {
        let mut color = |lo: f64, hi: f64| {
            [
                rng.random_range(lo..hi),
                rng.random_range(lo..hi),
                rng.random_range(lo..hi),
            ]
        };
        let base = color(60.0, 230.0);
        let waves = (0..3)
            .map(|_| {
                let fx = rng.random_range(-0.15..0.15);
                let fy = rng.random_range(-0.15..0.15);
                let phase = rng.random_range(0.0..2.0 * PI);
                let amp = [
                    rng.random_range(10.0..40.0),
                    rng.random_range(10.0..40.0),
                    rng.random_range(10.0..40.0),
                ];
                (fx, fy, phase, amp)
            })
            .collect();
        let patches = (0..rng.random_range(2..6))
            .map(|_| {
                let w = rng.random_range(size / 8..size / 2);
                let h = rng.random_range(size / 8..size / 2);
                let x = rng.random_range(0..size - w);
                let y = rng.random_range(0..size - h);
                let c = [
                    rng.random_range(30.0..250.0),
                    rng.random_range(30.0..250.0),
                    rng.random_range(30.0..250.0),
                ];
                (x, y, w, h, c)
            })
            .collect();
        Self {
            base,
            waves,
            patches,
        }
    }

    fn at(&self, x: usize, y: usize) -> [f64; 3] {
        let mut c = self.base;
        for &(x0, y0, w, h, pc) in &self.patches {
            if x >= x0 && x < x0 + w && y >= y0 && y < y0 + h {
                c = pc;
            }
        }
        for &(fx, fy, phase, amp) in &self.waves {
            let s = (fx * x as f64 + fy * y as f64 + phase).sin();
            for k in 0..3 {
                c[k] += amp[k] * s;
            }
        }
        c
    }
}

/// Renders `num_classes x per_class` scenes under `root/out_subdir` and
/// returns their manifest (paths relative to `root`). Output is a pure
/// function of `params`.
pub fn generate_synthetic_corpus(
    params: &SynthParams,
    root: &Path,
    out_subdir: &str,
    dataset_id: &str,
) -> Result<Manifest> {
    params.validate()?;
    let jobs: Vec<(usize, usize)> = (0..params.num_classes)
        .flat_map(|c| (0..params.per_class).map(move |i| (c, i)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(class_id, index)| {
            let (img, bbox) = render_scene(params, class_id, index);
            let class_name = format!("c{class_id:02}_{}", SHAPE_FAMILIES[class_id]);
            let rel = format!("{out_subdir}/{class_name}/{class_name}_{index:05}.png");
            img.save(&root.join(&rel))?;
            Ok(SampleRecord {
                image_path: rel,
                class_id,
                class_name,
                bbox,
                provenance: Provenance::GroundTruth,
                aug_ops: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Manifest::new(dataset_id, params.num_classes, records)
}
