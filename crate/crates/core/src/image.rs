//! Raster containers, PNG/PGM I/O and the shared low-level kernels.

use std::fs::File;
use std::io::{BufWriter, Read};
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat, ImageReader};

use crate::sum;
use crate::{Error, Result};

/// BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// H×W×C raster with values in `[0, 1]`, stored row-major with interleaved
/// channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidDimensions(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidValue(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image from `f(y, x, c)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    /// Clamps every value into `[0, 1]`. Non-finite values are rejected.
    pub fn from_clamped(
        height: usize,
        width: usize,
        channels: usize,
        mut data: Vec<f64>,
    ) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite pixel value {v}")));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn mean(&self) -> f64 {
        sum::mean(&self.data)
    }

    /// Copies channel `c` out as a raw plane.
    pub fn channel_plane(&self, c: usize) -> Plane {
        Plane {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .skip(c)
                .step_by(self.channels)
                .copied()
                .collect(),
        }
    }

    /// Applies `f` to every value and clamps the result back into `[0, 1]`.
    pub fn map_clamped(&self, f: impl Fn(f64) -> f64) -> ImageTensor {
        ImageTensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| clamp_unit(f(v))).collect(),
        }
    }
}

fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidDimensions(format!(
            "zero-dimension raster {height}x{width}"
        )));
    }
    Ok(())
}

/// Single-channel map of unconstrained finite reals (gradients, losses, weights).
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} plane needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite value {v}")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn same_shape(&self, other: &Plane) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn mean(&self) -> f64 {
        sum::mean(&self.data)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Converts to a single-channel image, clamping into `[0, 1]`.
    pub fn to_image_clamped(&self) -> ImageTensor {
        ImageTensor {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.data.iter().map(|&v| clamp_unit(v)).collect(),
        }
    }
}

impl From<&ImageTensor> for Plane {
    /// Single-channel images convert directly; colour images go through luma.
    fn from(img: &ImageTensor) -> Self {
        to_grayscale(img).channel_plane(0)
    }
}

/// 256-bin intensity histogram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram256 {
    bins: [u64; 256],
    total: u64,
}

impl Histogram256 {
    pub fn bins(&self) -> &[u64; 256] {
        &self.bins
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Bin probabilities.
    pub fn normalized(&self) -> [f64; 256] {
        let mut p = [0.0; 256];
        for (pi, &b) in p.iter_mut().zip(self.bins.iter()) {
            *pi = b as f64 / self.total as f64;
        }
        p
    }
}

/// Loads an 8-bit grayscale/RGB PNG or a binary (P5) PGM; values become `v / 255`.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let mut magic = [0u8; 2];
    File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .map_err(|e| Error::io(path, e))?;

    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png) => {}
        Some(ImageFormat::Pnm) if &magic == b"P5" => {}
        Some(ImageFormat::Pnm) => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: only binary PGM (P5) is supported among PNM variants",
                path.display()
            )))
        }
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: {other:?}",
                path.display()
            )))
        }
    }
    let decoded = reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    check_dims(height, width)?;
    let (channels, bytes) = match decoded {
        DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
        DynamicImage::ImageRgb8(buf) => (3, buf.into_raw()),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: colour type {:?} (need 8-bit gray or RGB)",
                path.display(),
                other.color()
            )))
        }
    };
    let data = bytes.into_iter().map(|b| b as f64 / 255.0).collect();
    ImageTensor::new(height, width, channels, data)
}

/// Quantizes to 8 bits (`round(v * 255)`) and writes a PNG.
pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img.data.iter().map(|&v| to_u8(v)).collect();
    let color = if img.channels == 1 {
        ExtendedColorType::L8
    } else {
        ExtendedColorType::Rgb8
    };
    write_png(path, &bytes, img.width, img.height, color)
}

pub(crate) fn to_u8(v: f64) -> u8 {
    (clamp_unit(v) * 255.0).round() as u8
}

/// Writes a 16-bit grayscale PNG; `values` must already be in `[0, 65535]`.
pub fn save_png16(values: &[u16], width: usize, height: usize, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_be_bytes()).collect();
    write_png(path, &bytes, width, height, ExtendedColorType::L16)
}

fn write_png(
    path: &Path,
    bytes: &[u8],
    width: usize,
    height: usize,
    color: ExtendedColorType,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    PngEncoder::new(BufWriter::new(file))
        .write_image(bytes, width as u32, height as u32, color)
        .map_err(|e| Error::Encode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Writes an 8-bit binary PGM.
pub fn save_pgm(bytes: &[u8], width: usize, height: usize, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(bytes, width as u32, height as u32, ExtendedColorType::L8)
        .map_err(|e| Error::Encode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// BT.601 luma for RGB input; grayscale input is returned unchanged.
pub fn to_grayscale(img: &ImageTensor) -> ImageTensor {
    if img.channels == 1 {
        return img.clone();
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|px| {
            let v = LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2];
            v.min(1.0)
        })
        .collect();
    ImageTensor {
        height: img.height,
        width: img.width,
        channels: 1,
        data,
    }
}

/// Bin index `floor(v * 255 + 0.5)` clamped to `[0, 255]`.
pub fn histogram256(img: &ImageTensor) -> Result<Histogram256> {
    if img.channels != 1 {
        return Err(Error::InvalidDimensions(format!(
            "histogram needs a single-channel image, got {} channels",
            img.channels
        )));
    }
    let mut bins = [0u64; 256];
    for &v in &img.data {
        bins[bin_index(v)] += 1;
    }
    Ok(Histogram256 {
        bins,
        total: img.data.len() as u64,
    })
}

pub(crate) fn bin_index(v: f64) -> usize {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as usize
}

pub(crate) fn replicate(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Half-sample symmetric reflection (`... b a | a b c ... | c b ...`), valid
/// for any offset.
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Un-normalized 3×3 Sobel gradient magnitude with replicated borders.
pub fn sobel_magnitude(img: &ImageTensor) -> Result<Plane> {
    if img.channels != 1 {
        return Err(Error::InvalidDimensions(format!(
            "sobel needs a single-channel image, got {} channels",
            img.channels
        )));
    }
    Ok(sobel_plane(&img.channel_plane(0)))
}

pub(crate) fn sobel_plane(p: &Plane) -> Plane {
    let (h, w) = (p.height, p.width);
    let at = |y: isize, x: isize| p.data[replicate(y, h) * w + replicate(x, w)];
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    Plane {
        height: h,
        width: w,
        data: out,
    }
}

/// Normalized 1-D Gaussian taps of radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "gaussian sigma must be positive, got {sigma}"
        )));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total = sum::sum(taps.iter().copied());
    Ok(taps.into_iter().map(|t| t / total).collect())
}

/// Separable Gaussian blur of radius `ceil(3 sigma)`.
///
/// Borders use half-sample symmetric reflection, which keeps the image mean
/// unchanged. For radius 1 this coincides with replicate padding.
pub fn gaussian_blur(img: &ImageTensor, sigma: f64) -> Result<ImageTensor> {
    let kernel = gaussian_kernel(sigma)?;
    let data = convolve_separable(&img.data, img.height, img.width, img.channels, &kernel);
    // the kernel is a convex combination, so values stay in [0, 1] up to rounding
    Ok(ImageTensor {
        height: img.height,
        width: img.width,
        channels: img.channels,
        data: data.into_iter().map(clamp_unit).collect(),
    })
}

/// [`gaussian_blur`] on an unconstrained plane.
pub fn blur_plane(p: &Plane, sigma: f64) -> Result<Plane> {
    let kernel = gaussian_kernel(sigma)?;
    Ok(filter_plane(p, &kernel))
}

/// Separable filtering of a plane with a symmetric, odd-length kernel.
pub(crate) fn filter_plane(p: &Plane, kernel: &[f64]) -> Plane {
    Plane {
        height: p.height,
        width: p.width,
        data: convolve_separable(&p.data, p.height, p.width, 1, kernel),
    }
}

pub(crate) fn convolve_separable(
    data: &[f64],
    h: usize,
    w: usize,
    c: usize,
    kernel: &[f64],
) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, &t) in kernel.iter().enumerate() {
                    let xx = reflect(x as isize + k as isize - radius, w);
                    acc += t * data[(y * w + xx) * c + ch];
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, &t) in kernel.iter().enumerate() {
                    let yy = reflect(y as isize + k as isize - radius, h);
                    acc += t * tmp[(yy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc;
            }
        }
    }
    out
}
