//! Edge extractors (Canny, Prewitt and a thick-outline proxy for HED),
//! mask combination and RGB overlay.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{convolve_plane, dilate, gaussian_blur_plane, to_grayscale, Image, Kernel, Plane};

/// Binary single-channel mask; `true` marks an edge pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EdgeMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl EdgeMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::invalid(format!(
                "mask buffer of {} does not match {width}x{height}",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                m.bits[y * width + x] = f(x, y);
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// `true` when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &EdgeMask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn transpose(&self) -> EdgeMask {
        EdgeMask::from_fn(self.height, self.width, |x, y| self.get(y, x))
    }

    /// 8-bit rendering: 255 for edges, 0 elsewhere.
    pub fn to_image(&self) -> Image {
        let data = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        Image::new(self.width, self.height, 1, data).expect("mask dims are positive")
    }

    /// Thresholds a grayscale rendering at 128.
    pub fn from_image(img: &Image) -> EdgeMask {
        let gray = to_grayscale(img);
        EdgeMask {
            width: gray.width(),
            height: gray.height(),
            bits: gray.data().iter().map(|&v| v >= 128).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CannyParams {
    pub sigma: f64,
    /// Fraction of the maximum gradient magnitude.
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrewittParams {
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThickParams {
    pub threshold: f64,
    pub dilate_radius: usize,
}

/// Detector parameters. Thresholds are fractions of the per-image maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdgeParams {
    pub canny: CannyParams,
    pub prewitt: PrewittParams,
    pub thick: ThickParams,
}

impl Default for EdgeParams {
    fn default() -> Self {
        Self {
            canny: CannyParams {
                sigma: 1.4,
                low: 0.1,
                high: 0.2,
            },
            prewitt: PrewittParams { threshold: 0.15 },
            thick: ThickParams {
                threshold: 0.1,
                dilate_radius: 2,
            },
        }
    }
}

impl EdgeParams {
    pub fn validate(&self) -> Result<()> {
        let c = &self.canny;
        if !(c.sigma > 0.0) {
            return Err(Error::invalid(format!("canny sigma must be positive, got {}", c.sigma)));
        }
        if !(0.0 < c.low && c.low < c.high && c.high <= 1.0) {
            return Err(Error::invalid(format!(
                "canny thresholds need 0 < low < high <= 1, got low={} high={}",
                c.low, c.high
            )));
        }
        for (name, t) in [("prewitt", self.prewitt.threshold), ("thick", self.thick.threshold)] {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::invalid(format!("{name} threshold must lie in (0, 1], got {t}")));
            }
        }
        Ok(())
    }
}

fn gray_plane(img: &Image) -> Plane {
    to_grayscale(img).channel_plane(0)
}

fn magnitude(gx: &Plane, gy: &Plane) -> Plane {
    let data = gx.data.iter().zip(&gy.data).map(|(a, b)| a.hypot(*b)).collect();
    Plane::new(gx.width, gx.height, data)
}

fn threshold_fraction(mag: &Plane, fraction: f64) -> EdgeMask {
    let max = mag.max();
    if max <= 0.0 {
        return EdgeMask::empty(mag.width, mag.height);
    }
    let cut = fraction * max;
    EdgeMask {
        width: mag.width,
        height: mag.height,
        bits: mag.data.iter().map(|&m| m >= cut).collect(),
    }
}

/// Prewitt gradient magnitude `sqrt(Gx^2 + Gy^2)` of the grayscale image.
pub fn prewitt_magnitude(img: &Image) -> Plane {
    let g = gray_plane(img);
    magnitude(
        &convolve_plane(&g, &Kernel::prewitt_x()),
        &convolve_plane(&g, &Kernel::prewitt_y()),
    )
}

pub fn prewitt(img: &Image, params: &EdgeParams) -> EdgeMask {
    threshold_fraction(&prewitt_magnitude(img), params.prewitt.threshold)
}

/// Intermediate Canny products, exposed for verification.
#[derive(Debug, Clone)]
pub struct CannyStages {
    pub gx: Plane,
    pub gy: Plane,
    pub magnitude: Plane,
    /// Pixels surviving non-maximum suppression.
    pub thinned: EdgeMask,
    pub strong: EdgeMask,
    pub weak: EdgeMask,
    pub edges: EdgeMask,
}

/// Neighbour offset along the gradient direction, quantised to 0/45/90/135 degrees.
pub fn quantized_direction(gx: f64, gy: f64) -> (isize, isize) {
    let mut angle = gy.atan2(gx).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    if !(22.5..157.5).contains(&angle) {
        (1, 0)
    } else if angle < 67.5 {
        (1, 1)
    } else if angle < 112.5 {
        (0, 1)
    } else {
        (-1, 1)
    }
}

/// Magnitude at an offset position, 0 outside the image.
#[inline]
pub fn magnitude_or_zero(mag: &Plane, x: isize, y: isize) -> f64 {
    if x < 0 || y < 0 || x >= mag.width as isize || y >= mag.height as isize {
        0.0
    } else {
        mag.at(x as usize, y as usize)
    }
}

/// Gradient magnitudes below this are rounding residue from the blur, not edges.
const MAGNITUDE_FLOOR: f64 = 1e-6;

pub fn canny_stages(img: &Image, params: &EdgeParams) -> Result<CannyStages> {
    let p = params.canny;
    let smooth = gaussian_blur_plane(&gray_plane(img), p.sigma)?;
    let gx = convolve_plane(&smooth, &Kernel::sobel_x());
    let gy = convolve_plane(&smooth, &Kernel::sobel_y());
    let mag = magnitude(&gx, &gy);
    let (w, h) = (mag.width, mag.height);

    let mut thinned = EdgeMask::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            let m = mag.at(x, y);
            if m <= MAGNITUDE_FLOOR {
                continue;
            }
            let i = y * w + x;
            let (dx, dy) = quantized_direction(gx.data[i], gy.data[i]);
            let ahead = magnitude_or_zero(&mag, x as isize + dx, y as isize + dy);
            let behind = magnitude_or_zero(&mag, x as isize - dx, y as isize - dy);
            // Strict on one side so a two-pixel plateau keeps a single pixel.
            if m >= ahead && m > behind {
                thinned.set(x, y, true);
            }
        }
    }

    let max = mag.max();
    let mut strong = EdgeMask::empty(w, h);
    let mut weak = EdgeMask::empty(w, h);
    if max > MAGNITUDE_FLOOR {
        let (lo, hi) = (p.low * max, p.high * max);
        for i in 0..w * h {
            if thinned.bits[i] {
                let m = mag.data[i];
                strong.bits[i] = m >= hi;
                weak.bits[i] = m >= lo;
            }
        }
    }
    let edges = hysteresis(&strong, &weak);
    Ok(CannyStages {
        gx,
        gy,
        magnitude: mag,
        thinned,
        strong,
        weak,
        edges,
    })
}

/// Keeps every `candidate` pixel 8-connected (through candidates) to a seed.
pub fn hysteresis(seeds: &EdgeMask, candidates: &EdgeMask) -> EdgeMask {
    let (w, h) = (seeds.width, seeds.height);
    let mut out = EdgeMask::empty(w, h);
    let mut queue = VecDeque::new();
    for (i, &s) in seeds.bits.iter().enumerate() {
        if s {
            out.bits[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if candidates.bits[j] && !out.bits[j] {
                    out.bits[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    out
}

/// Blur, Sobel gradients, 4-direction non-maximum suppression, double
/// threshold and hysteresis. Produces one-pixel-wide edges.
pub fn canny(img: &Image, params: &EdgeParams) -> Result<EdgeMask> {
    Ok(canny_stages(img, params)?.edges)
}

/// Sobel magnitude threshold before dilation.
pub fn thick_edge_core(img: &Image, params: &EdgeParams) -> EdgeMask {
    let g = gray_plane(img);
    let mag = magnitude(
        &convolve_plane(&g, &Kernel::sobel_x()),
        &convolve_plane(&g, &Kernel::sobel_y()),
    );
    threshold_fraction(&mag, params.thick.threshold)
}

/// Deterministic stand-in for HED: thresholded gradient magnitude dilated
/// into thick contiguous outlines.
pub fn thick_edge(img: &Image, params: &EdgeParams) -> EdgeMask {
    dilate(&thick_edge_core(img, params), params.thick.dilate_radius)
}

/// Loads an externally computed edge map (e.g. real HED output).
pub fn import_edges(path: &Path, expected: (usize, usize)) -> Result<EdgeMask> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "edge map not found"),
        ));
    }
    let img = Image::load(path)?;
    if (img.width(), img.height()) != expected {
        return Err(Error::invalid(format!(
            "edge map {} is {}x{}, expected {}x{}",
            path.display(),
            img.width(),
            img.height(),
            expected.0,
            expected.1
        )));
    }
    Ok(EdgeMask::from_image(&img))
}

/// Pixelwise union of two or more equally sized masks.
pub fn combine(masks: &[&EdgeMask]) -> Result<EdgeMask> {
    if masks.len() < 2 {
        return Err(Error::invalid(format!(
            "combine needs at least two masks, got {}",
            masks.len()
        )));
    }
    let first = masks[0];
    let mut out = first.clone();
    for m in &masks[1..] {
        if (m.width, m.height) != (first.width, first.height) {
            return Err(Error::invalid(format!(
                "mask sizes differ: {}x{} vs {}x{}",
                m.width, m.height, first.width, first.height
            )));
        }
        out.bits.iter_mut().zip(&m.bits).for_each(|(o, &b)| *o |= b);
    }
    Ok(out)
}

/// Paints `color` onto an RGB image wherever the mask is set.
pub fn overlay(rgb: &Image, mask: &EdgeMask, color: [u8; 3]) -> Result<Image> {
    if rgb.channels() != 3 {
        return Err(Error::invalid(format!(
            "overlay expects an RGB image, got {} channels",
            rgb.channels()
        )));
    }
    if (rgb.width(), rgb.height()) != (mask.width, mask.height) {
        return Err(Error::invalid(format!(
            "overlay size mismatch: image {}x{}, mask {}x{}",
            rgb.width(),
            rgb.height(),
            mask.width,
            mask.height
        )));
    }
    let mut out = rgb.clone();
    for (px, &b) in out.data_mut().chunks_exact_mut(3).zip(&mask.bits) {
        if b {
            px.copy_from_slice(&color);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vstep(w: usize, h: usize, at: usize) -> Image {
        Image::gray_from_fn(w, h, |x, _| if x < at { 0 } else { 255 })
    }

    fn square_image() -> Image {
        Image::gray_from_fn(40, 40, |x, y| {
            if (12..28).contains(&x) && (12..28).contains(&y) {
                20
            } else {
                245
            }
        })
    }

    #[test]
    fn constant_images_have_no_edges() {
        let p = EdgeParams::default();
        for v in [0u8, 200, 255] {
            let img = Image::filled(12, 9, &[v, v, v]);
            assert!(prewitt(&img, &p).is_empty());
            assert!(canny(&img, &p).unwrap().is_empty());
            assert!(thick_edge(&img, &p).is_empty());
        }
    }

    #[test]
    fn prewitt_marks_step_adjacent_columns() {
        let m = prewitt(&vstep(10, 6, 5), &EdgeParams::default());
        for y in 0..6 {
            for x in 0..10 {
                assert_eq!(m.get(x, y), x == 4 || x == 5, "({x},{y})");
            }
        }
        let t = prewitt(&vstep(10, 6, 5).transpose(), &EdgeParams::default());
        assert_eq!(t, m.transpose());
    }

    #[test]
    fn canny_closes_contour_around_square() {
        let m = canny(&square_image(), &EdgeParams::default()).unwrap();
        assert!(!m.is_empty());
        // Every edge pixel hugs the square boundary.
        for y in 0..40 {
            for x in 0..40 {
                if m.get(x, y) {
                    let near = |v: usize| (10..=13).contains(&v) || (26..=29).contains(&v);
                    let inside = |v: usize| (10..=29).contains(&v);
                    assert!(inside(x) && inside(y) && (near(x) || near(y)), "({x},{y})");
                }
            }
        }
        // Closed: flood fill from the centre never reaches the border.
        let mut seen = vec![false; 1600];
        let mut stack = vec![(20usize, 20usize)];
        while let Some((x, y)) = stack.pop() {
            if seen[y * 40 + x] || m.get(x, y) {
                continue;
            }
            seen[y * 40 + x] = true;
            assert!(x > 0 && y > 0 && x < 39 && y < 39, "contour leaks at ({x},{y})");
            stack.extend([(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]);
        }
    }

    #[test]
    fn canny_edges_are_thin() {
        let m = canny(&vstep(20, 10, 10), &EdgeParams::default()).unwrap();
        for y in 0..10 {
            let row: usize = (0..20).filter(|&x| m.get(x, y)).count();
            assert_eq!(row, 1, "row {y}");
        }
    }

    #[test]
    fn thick_edge_band_width() {
        let p = EdgeParams {
            thick: ThickParams {
                threshold: 0.5,
                dilate_radius: 1,
            },
            ..EdgeParams::default()
        };
        let img = vstep(20, 8, 10);
        let core = thick_edge_core(&img, &p);
        let thick = thick_edge(&img, &p);
        assert!(core.is_subset_of(&thick));
        for y in 0..8 {
            assert!((0..20).filter(|&x| thick.get(x, y)).count() >= 3);
        }
    }

    #[test]
    fn import_edges_contract() {
        let dir = tempfile::tempdir().unwrap();
        let black = dir.path().join("black.png");
        let white = dir.path().join("white.png");
        Image::filled(20, 10, &[0]).save(&black).unwrap();
        Image::filled(20, 10, &[255]).save(&white).unwrap();
        assert!(import_edges(&black, (20, 10)).unwrap().is_empty());
        assert_eq!(import_edges(&white, (20, 10)).unwrap(), EdgeMask::full(20, 10));
        assert!(matches!(
            import_edges(&white, (19, 10)),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            import_edges(&dir.path().join("nope.png"), (1, 1)),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn combine_identity_and_errors() {
        let m = EdgeMask::from_fn(8, 8, |x, y| (x * y) % 3 == 0);
        let e = EdgeMask::empty(8, 8);
        assert_eq!(combine(&[&m, &e]).unwrap(), m);
        assert_eq!(combine(&[&m, &m]).unwrap(), m);
        assert!(combine(&[&m]).is_err());
        assert!(combine(&[&m, &EdgeMask::empty(8, 7)]).is_err());
    }

    #[test]
    fn overlay_examples() {
        let rgb = Image::rgb_from_fn(6, 5, |x, y| [x as u8 * 10, y as u8 * 20, 90]);
        assert_eq!(overlay(&rgb, &EdgeMask::empty(6, 5), [0, 0, 0]).unwrap(), rgb);
        assert_eq!(
            overlay(&rgb, &EdgeMask::full(6, 5), [1, 2, 3]).unwrap(),
            Image::filled(6, 5, &[1, 2, 3])
        );
        let m = EdgeMask::from_fn(6, 5, |x, _| x == 2);
        let once = overlay(&rgb, &m, [0, 0, 0]).unwrap();
        assert_eq!(overlay(&once, &m, [0, 0, 0]).unwrap(), once);
        for y in 0..5 {
            for x in 0..6 {
                assert_eq!(once.pixel(x, y) != rgb.pixel(x, y), m.get(x, y) && rgb.pixel(x, y) != [0, 0, 0]);
            }
        }
        assert!(overlay(&rgb, &EdgeMask::empty(5, 5), [0, 0, 0]).is_err());
        assert!(overlay(&to_grayscale(&rgb), &EdgeMask::empty(6, 5), [0, 0, 0]).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(EdgeParams::default().validate().is_ok());
        let mut p = EdgeParams::default();
        p.canny.low = 0.3;
        assert!(p.validate().is_err());
        let mut p = EdgeParams::default();
        p.prewitt.threshold = 0.0;
        assert!(p.validate().is_err());
    }
}
