//! Low-level image primitives: grayscale conversion, bilinear resize,
//! 2-D correlation, Gaussian smoothing, binary dilation and PNG I/O.
//!
//! Every operation is a pure function of its inputs. Convolutions use
//! edge-replication padding so that white-background crops do not grow
//! spurious edges along the image border.

use std::fs;
use std::path::Path;

use crate::edges::EdgeMask;
use crate::error::{Error, Result};

/// An 8-bit raster with one (gray) or three (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "buffer of {} bytes does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// A constant image. Panics on zero dimensions or a bad channel count.
    pub fn filled(width: usize, height: usize, pixel: &[u8]) -> Self {
        let channels = pixel.len();
        let data = pixel
            .iter()
            .copied()
            .cycle()
            .take(width * height * channels)
            .collect();
        Self::new(width, height, channels, data).expect("valid constant image")
    }

    pub fn gray_from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, 1, data).expect("valid gray image")
    }

    pub fn rgb_from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, 3, data).expect("valid rgb image")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn transpose(&self) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for x in 0..self.width {
            for y in 0..self.height {
                data.extend_from_slice(self.pixel(x, y));
            }
        }
        Image::new(self.height, self.width, self.channels, data).expect("same buffer size")
    }

    /// Single channel `c` as a real-valued plane.
    pub fn channel_plane(&self, c: usize) -> Plane {
        assert!(c < self.channels, "channel {c} out of range");
        let data = self
            .data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .map(|&v| f64::from(v))
            .collect();
        Plane::new(self.width, self.height, data)
    }

    /// Rebuilds an image from per-channel planes, rounding and clamping to [0, 255].
    pub fn from_planes(planes: &[Plane]) -> Result<Image> {
        let first = planes
            .first()
            .ok_or_else(|| Error::invalid("no planes supplied"))?;
        let (w, h) = (first.width, first.height);
        if planes.iter().any(|p| p.width != w || p.height != h) {
            return Err(Error::invalid("planes differ in size"));
        }
        let mut data = Vec::with_capacity(w * h * planes.len());
        for i in 0..w * h {
            for p in planes {
                data.push(clamp_u8(p.data[i]));
            }
        }
        Image::new(w, h, planes.len(), data)
    }

    pub fn load(path: &Path) -> Result<Image> {
        let dynamic = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
        if dynamic.color().has_color() {
            Image::new(w, h, 3, dynamic.into_rgb8().into_raw())
        } else {
            Image::new(w, h, 1, dynamic.into_luma8().into_raw())
        }
    }

    /// Writes an 8-bit PNG, creating parent directories as needed.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::save_buffer_with_format(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// A real-valued single-channel grid, used for signed filter responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "plane buffer size");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0.0; width * height])
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Value at a possibly out-of-range coordinate, replicating the border.
    #[inline]
    pub fn at_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.at(x, y)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

/// Square correlation kernel with an odd side so the anchor is the centre cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size < 3 || size % 2 == 0 {
            return Err(Error::invalid(format!(
                "kernel size must be odd and >= 3, got {size}"
            )));
        }
        if weights.len() != size * size {
            return Err(Error::invalid(format!(
                "kernel of size {size} needs {} weights, got {}",
                size * size,
                weights.len()
            )));
        }
        Ok(Self { size, weights })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn transpose(&self) -> Kernel {
        let n = self.size;
        let weights = (0..n * n).map(|i| self.weights[(i % n) * n + i / n]).collect();
        Kernel { size: n, weights }
    }

    pub fn identity3() -> Kernel {
        Kernel::new(3, vec![0., 0., 0., 0., 1., 0., 0., 0., 0.]).unwrap()
    }

    /// Horizontal-derivative Prewitt kernel; its transpose is the vertical one.
    pub fn prewitt_x() -> Kernel {
        Kernel::new(3, vec![-1., 0., 1., -1., 0., 1., -1., 0., 1.]).unwrap()
    }

    pub fn prewitt_y() -> Kernel {
        Self::prewitt_x().transpose()
    }

    pub fn sobel_x() -> Kernel {
        Kernel::new(3, vec![-1., 0., 1., -2., 0., 2., -1., 0., 1.]).unwrap()
    }

    pub fn sobel_y() -> Kernel {
        Self::sobel_x().transpose()
    }
}

#[inline]
pub(crate) fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// BT.601 luma. One-channel input is returned unchanged.
pub fn to_grayscale(img: &Image) -> Image {
    if img.channels == 1 {
        return img.clone();
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| {
            clamp_u8(0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
        })
        .collect();
    Image::new(img.width, img.height, 1, data).expect("same dims")
}

/// Bilinear resize with pixel-centre alignment.
pub fn resize(img: &Image, width: usize, height: usize) -> Result<Image> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!(
            "resize target must be positive, got {width}x{height}"
        )));
    }
    if width == img.width && height == img.height {
        return Ok(img.clone());
    }
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    let xs: Vec<(usize, usize, f64)> = (0..width)
        .map(|x| sample_axis((x as f64 + 0.5) * sx - 0.5, img.width))
        .collect();
    let c = img.channels;
    let mut data = Vec::with_capacity(width * height * c);
    for y in 0..height {
        let (y0, y1, fy) = sample_axis((y as f64 + 0.5) * sy - 0.5, img.height);
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let p = |x: usize, y: usize| f64::from(img.data[(y * img.width + x) * c + ch]);
                let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                data.push(clamp_u8(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    Image::new(width, height, c, data)
}

fn sample_axis(pos: f64, len: usize) -> (usize, usize, f64) {
    let pos = pos.clamp(0.0, (len - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, pos - i0 as f64)
}

/// Correlates a grayscale image with `kernel` (anchor at the centre,
/// replicated borders). The response is signed and unclamped.
pub fn convolve(img: &Image, kernel: &Kernel) -> Result<Plane> {
    if img.channels != 1 {
        return Err(Error::invalid(format!(
            "convolve expects a grayscale image, got {} channels",
            img.channels
        )));
    }
    Ok(convolve_plane(&img.channel_plane(0), kernel))
}

pub fn convolve_plane(src: &Plane, kernel: &Kernel) -> Plane {
    let r = (kernel.size / 2) as isize;
    let mut out = Plane::zeros(src.width, src.height);
    for y in 0..src.height {
        for x in 0..src.width {
            let mut acc = 0.0;
            for ky in -r..=r {
                for kx in -r..=r {
                    let w = kernel.weights[((ky + r) as usize) * kernel.size + (kx + r) as usize];
                    if w != 0.0 {
                        acc += w * src.at_clamped(x as isize + kx, y as isize + ky);
                    }
                }
            }
            out.data[y * src.width + x] = acc;
        }
    }
    out
}

/// Normalised 1-D Gaussian weights with radius `ceil(3 sigma)`.
pub fn gaussian_weights(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut w: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Separable Gaussian smoothing of a real plane with replicated borders.
pub fn gaussian_blur_plane(src: &Plane, sigma: f64) -> Result<Plane> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let w = gaussian_weights(sigma);
    let r = (w.len() / 2) as isize;
    let mut tmp = Plane::zeros(src.width, src.height);
    for y in 0..src.height {
        for x in 0..src.width {
            tmp.data[y * src.width + x] = w
                .iter()
                .enumerate()
                .map(|(i, wi)| wi * src.at_clamped(x as isize + i as isize - r, y as isize))
                .sum();
        }
    }
    let mut out = Plane::zeros(src.width, src.height);
    for y in 0..src.height {
        for x in 0..src.width {
            out.data[y * src.width + x] = w
                .iter()
                .enumerate()
                .map(|(i, wi)| wi * tmp.at_clamped(x as isize, y as isize + i as isize - r))
                .sum();
        }
    }
    Ok(out)
}

/// Gaussian blur applied per channel; output is rounded and clamped.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    let planes = (0..img.channels)
        .map(|c| gaussian_blur_plane(&img.channel_plane(c), sigma))
        .collect::<Result<Vec<_>>>()?;
    Image::from_planes(&planes)
}

/// Binary dilation with a `(2r+1)^2` square structuring element, clipped at
/// the borders.
pub fn dilate(mask: &EdgeMask, radius: usize) -> EdgeMask {
    let (w, h) = (mask.width(), mask.height());
    if radius == 0 {
        return mask.clone();
    }
    // Square element is separable: horizontal pass then vertical pass.
    let mut rows = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            rows[y * w + x] = (lo..=hi).any(|xx| mask.get(xx, y));
        }
    }
    let mut out = EdgeMask::empty(w, h);
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        for x in 0..w {
            if (lo..=hi).any(|yy| rows[yy * w + x]) {
                out.set(x, y, true);
            }
        }
    }
    out
}
