//! Seeded synthetic two-source scenes with ground-truth dominance masks, and
//! the corruption operators used to probe weight behaviour.
//!
//! A scene is a smooth base field (bilinear interpolation of a coarse random
//! grid) plus small texture elements. Wherever source A dominates, A keeps
//! the texture and B sees it low-pass filtered; elsewhere the roles swap.
//! All randomness comes from [`SplitMix64`], so scenes are reproducible
//! bit-for-bit from their spec.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::image::{blur_plane, gaussian_blur, load_image, save_image, save_pgm, ImageTensor, Plane};
use crate::kv::KvRecord;
use crate::rng::SplitMix64;
use crate::{Error, Result};

/// Minimum scene side length.
pub const MIN_SIDE: usize = 16;
/// Blur applied to the texture of the non-dominant source.
pub const DEGRADE_SIGMA: f64 = 2.0;
/// Coarse grid spacing of the base field, in pixels.
const FIELD_CELL: usize = 16;
/// Texture elements per pixel at density 1.
const ELEMENTS_PER_PIXEL: f64 = 1.0 / 24.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    LeftRight,
    Quadrant,
    RandomBlobs,
}

impl Layout {
    pub const ALL: [Layout; 3] = [Layout::LeftRight, Layout::Quadrant, Layout::RandomBlobs];
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::LeftRight => "left-right",
            Layout::Quadrant => "quadrant",
            Layout::RandomBlobs => "random-blobs",
        })
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Layout::ALL
            .into_iter()
            .find(|l| l.to_string() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown layout {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Texture density in `[0, 1]`.
    pub density: f64,
    pub layout: Layout,
}

impl SceneSpec {
    pub fn new(height: usize, width: usize, seed: u64, density: f64, layout: Layout) -> Result<Self> {
        let spec = Self {
            height,
            width,
            seed,
            density,
            layout,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < MIN_SIDE || self.width < MIN_SIDE {
            return Err(Error::InvalidDimensions(format!(
                "scenes need sides of at least {MIN_SIDE}, got {}x{}",
                self.height, self.width
            )));
        }
        if !(0.0..=1.0).contains(&self.density) {
            return Err(Error::InvalidParameter(format!(
                "texture density must be in [0, 1], got {}",
                self.density
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvRecord {
        let mut rec = KvRecord::new();
        rec.set("height", self.height);
        rec.set("width", self.width);
        rec.set("seed", self.seed);
        rec.set("density", self.density);
        rec.set("layout", self.layout);
        rec
    }

    pub fn from_kv(rec: &KvRecord) -> Result<Self> {
        Self::new(
            rec.require("height")?,
            rec.require("width")?,
            rec.require("seed")?,
            rec.require("density")?,
            rec.require("layout")?,
        )
    }
}

/// Per-pixel ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dominance {
    A,
    B,
    /// Both sources carry the same content.
    Neutral,
}

impl Dominance {
    /// Gray level in `mask.pgm`.
    pub fn level(self) -> u8 {
        match self {
            Dominance::A => 0,
            Dominance::B => 255,
            Dominance::Neutral => 128,
        }
    }

    pub fn from_level(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Dominance::A),
            255 => Ok(Dominance::B),
            128 => Ok(Dominance::Neutral),
            other => Err(Error::InvalidValue(format!("mask level {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DominanceMask {
    height: usize,
    width: usize,
    labels: Vec<Dominance>,
}

impl DominanceMask {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[Dominance] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> Dominance {
        self.labels[y * self.width + x]
    }

    pub fn is_neutral(&self) -> bool {
        self.labels.iter().all(|&l| l == Dominance::Neutral)
    }

    pub fn count(&self, label: Dominance) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        self.labels.iter().map(|l| l.level()).collect()
    }

    pub fn from_image(img: &ImageTensor) -> Result<Self> {
        if img.channels() != 1 {
            return Err(Error::InvalidDimensions("mask must be single-channel".into()));
        }
        let labels = img
            .data()
            .iter()
            .map(|v| Dominance::from_level((v * 255.0).round() as u8))
            .collect::<Result<_>>()?;
        Ok(Self {
            height: img.height(),
            width: img.width(),
            labels,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub a: ImageTensor,
    pub b: ImageTensor,
    pub mask: DominanceMask,
}

fn base_field(h: usize, w: usize, rng: &mut SplitMix64) -> Vec<f64> {
    let gh = h / FIELD_CELL + 2;
    let gw = w / FIELD_CELL + 2;
    let grid: Vec<f64> = (0..gh * gw).map(|_| rng.uniform(0.25, 0.75)).collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let fy = y as f64 / FIELD_CELL as f64;
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..w {
            let fx = x as f64 / FIELD_CELL as f64;
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            let g = |yy: usize, xx: usize| grid[yy * gw + xx];
            let top = g(y0, x0) * (1.0 - tx) + g(y0, x0 + 1) * tx;
            let bottom = g(y0 + 1, x0) * (1.0 - tx) + g(y0 + 1, x0 + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Zero-mean-ish texture: small signed rectangles scattered over the frame.
fn texture(h: usize, w: usize, density: f64, rng: &mut SplitMix64) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    let count = (density * ELEMENTS_PER_PIXEL * (h * w) as f64).round() as usize;
    for _ in 0..count {
        let eh = rng.range_inclusive(1, 4) as usize;
        let ew = rng.range_inclusive(1, 4) as usize;
        let y0 = rng.below((h - eh + 1) as u64) as usize;
        let x0 = rng.below((w - ew + 1) as u64) as usize;
        let amplitude = rng.uniform(0.15, 0.35) * if rng.next_u64() & 1 == 0 { 1.0 } else { -1.0 };
        for y in y0..y0 + eh {
            for x in x0..x0 + ew {
                out[y * w + x] += amplitude;
            }
        }
    }
    out
}

fn layout_labels(spec: &SceneSpec, rng: &mut SplitMix64) -> Vec<Dominance> {
    let (h, w) = (spec.height, spec.width);
    let flip = rng.next_u64() & 1 == 1;
    let inside: Vec<bool> = match spec.layout {
        Layout::LeftRight => (0..h * w).map(|p| p % w < w / 2).collect(),
        Layout::Quadrant => (0..h * w).map(|p| (p / w < h / 2) == (p % w < w / 2)).collect(),
        Layout::RandomBlobs => {
            let side = h.min(w) as f64;
            let blobs: Vec<(f64, f64, f64)> = (0..rng.range_inclusive(3, 6))
                .map(|_| {
                    let cy = rng.uniform(0.0, h as f64);
                    let cx = rng.uniform(0.0, w as f64);
                    let r = rng.uniform(0.1, 0.3) * side;
                    (cy, cx, r)
                })
                .collect();
            (0..h * w)
                .map(|p| {
                    let (y, x) = ((p / w) as f64 + 0.5, (p % w) as f64 + 0.5);
                    blobs.iter().any(|&(cy, cx, r)| (y - cy).powi(2) + (x - cx).powi(2) <= r * r)
                })
                .collect()
        }
    };
    inside
        .into_iter()
        .map(|i| if i != flip { Dominance::A } else { Dominance::B })
        .collect()
}

/// Generates `(x_A, x_B, mask)` for one scene. With zero texture density the
/// sources are identical and the mask is all [`Dominance::Neutral`].
pub fn generate_pair(spec: &SceneSpec) -> Result<ScenePair> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = SplitMix64::new(spec.seed);
    let field = base_field(h, w, &mut rng);
    let detail = texture(h, w, spec.density, &mut rng);
    let labels = layout_labels(spec, &mut rng);

    let sharp: Vec<f64> = field.iter().zip(&detail).map(|(f, d)| f + d).collect();
    let textured = detail.iter().any(|&d| d != 0.0);
    let mask = DominanceMask {
        height: h,
        width: w,
        labels: if textured {
            labels
        } else {
            vec![Dominance::Neutral; h * w]
        },
    };
    if !textured {
        let img = ImageTensor::from_clamped(h, w, 1, sharp)?;
        return Ok(ScenePair {
            a: img.clone(),
            b: img,
            mask,
        });
    }
    let soft_detail = blur_plane(&Plane::new(h, w, detail)?, DEGRADE_SIGMA)?;
    let soft: Vec<f64> = field.iter().zip(soft_detail.data()).map(|(f, d)| f + d).collect();
    let pick = |want: Dominance| -> Vec<f64> {
        (0..h * w)
            .map(|p| if mask.labels[p] == want { sharp[p] } else { soft[p] })
            .collect()
    };
    Ok(ScenePair {
        a: ImageTensor::from_clamped(h, w, 1, pick(Dominance::A))?,
        b: ImageTensor::from_clamped(h, w, 1, pick(Dominance::B))?,
        mask,
    })
}

pub const CONTRAST_LADDER: [f64; 5] = [0.8, 0.6, 0.4, 0.25, 0.1];
pub const GAMMA_LADDER: [f64; 5] = [1.5, 2.2, 3.0, 4.0, 6.0];
pub const BLUR_LADDER: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorruptionKind {
    /// `v -> 0.5 + (v - 0.5) k`.
    Contrast,
    /// Severity-many seeded rectangles set to 0.
    Mask,
    /// `v -> v^gamma` (under-exposure), or `v^(1/gamma)` when `over`.
    Exposure { over: bool },
    /// Gaussian defocus.
    Blur,
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Mask => "mask",
            CorruptionKind::Exposure { over: false } => "exposure",
            CorruptionKind::Exposure { over: true } => "overexposure",
            CorruptionKind::Blur => "blur",
        })
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contrast" => Ok(CorruptionKind::Contrast),
            "mask" => Ok(CorruptionKind::Mask),
            "exposure" | "underexposure" => Ok(CorruptionKind::Exposure { over: false }),
            "overexposure" => Ok(CorruptionKind::Exposure { over: true }),
            "blur" => Ok(CorruptionKind::Blur),
            other => Err(Error::InvalidParameter(format!("unknown corruption {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CorruptionSpec {
    kind: CorruptionKind,
    severity: u8,
    seed: u64,
}

impl CorruptionSpec {
    /// `severity` must be in `1..=5`.
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(Error::InvalidParameter(format!("severity must be 1..=5, got {severity}")));
        }
        Ok(Self { kind, severity, seed })
    }

    pub fn kind(&self) -> CorruptionKind {
        self.kind
    }

    pub fn severity(&self) -> u8 {
        self.severity
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn level(&self) -> usize {
        self.severity as usize - 1
    }
}

/// Axis-aligned rectangle, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y && y < self.y + self.height && x >= self.x && x < self.x + self.width
    }
}

/// The rectangles zeroed by a mask corruption: `count` of them, each side
/// between 10% and 25% of the smaller image dimension (at least one pixel).
pub fn mask_rectangles(height: usize, width: usize, count: usize, seed: u64) -> Vec<Rect> {
    let side = height.min(width) as f64;
    let lo = ((0.10 * side).ceil() as u64).max(1);
    let hi = ((0.25 * side).floor() as u64).max(lo);
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|_| {
            let rh = rng.range_inclusive(lo, hi) as usize;
            let rw = rng.range_inclusive(lo, hi) as usize;
            let y = rng.below((height - rh.min(height) + 1) as u64) as usize;
            let x = rng.below((width - rw.min(width) + 1) as u64) as usize;
            Rect {
                y,
                x,
                height: rh.min(height),
                width: rw.min(width),
            }
        })
        .collect()
}

pub fn apply_corruption(x: &ImageTensor, spec: &CorruptionSpec) -> Result<ImageTensor> {
    let level = spec.level();
    match spec.kind {
        CorruptionKind::Contrast => {
            let k = CONTRAST_LADDER[level];
            Ok(x.map_clamped(|v| 0.5 + (v - 0.5) * k))
        }
        CorruptionKind::Exposure { over } => {
            let g = GAMMA_LADDER[level];
            let g = if over { 1.0 / g } else { g };
            Ok(x.map_clamped(|v| v.powf(g)))
        }
        CorruptionKind::Blur => gaussian_blur(x, BLUR_LADDER[level]),
        CorruptionKind::Mask => {
            let rects = mask_rectangles(x.height(), x.width(), spec.severity as usize, spec.seed);
            ImageTensor::from_fn(x.height(), x.width(), x.channels(), |yy, xx, c| {
                if rects.iter().any(|r| r.contains(yy, xx)) {
                    0.0
                } else {
                    x.get(yy, xx, c)
                }
            })
        }
    }
}

/// `count` scene specs cycling through the layouts, each with a seed drawn
/// from `SplitMix64::derive(seed, i)`.
pub fn scene_specs(count: usize, seed: u64, height: usize, width: usize, density: f64) -> Result<Vec<SceneSpec>> {
    (0..count)
        .map(|i| {
            let scene_seed = SplitMix64::derive(seed, i as u64).next_u64();
            SceneSpec::new(height, width, scene_seed, density, Layout::ALL[i % Layout::ALL.len()])
        })
        .collect()
}

pub fn scene_id(index: usize) -> String {
    format!("scene-{index:04}")
}

/// Writes `<root>/<scene-id>/{a.png, b.png, mask.pgm, spec.txt}` and
/// returns the scene directories.
pub fn write_dataset(root: &Path, specs: &[SceneSpec]) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let pair = generate_pair(spec)?;
        let dir = root.join(scene_id(i));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_scene(&dir, spec, &pair)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

pub fn write_scene(dir: &Path, spec: &SceneSpec, pair: &ScenePair) -> Result<()> {
    save_image(&pair.a, dir.join("a.png"))?;
    save_image(&pair.b, dir.join("b.png"))?;
    save_pgm(&pair.mask.to_pgm_bytes(), pair.mask.width, pair.mask.height, &dir.join("mask.pgm"))?;
    let spec_path = dir.join("spec.txt");
    fs::write(&spec_path, spec.to_kv().to_string()).map_err(|e| Error::io(&spec_path, e))
}

/// Reads a scene directory written by [`write_dataset`].
pub fn read_scene(dir: &Path) -> Result<(SceneSpec, ScenePair)> {
    let spec_path = dir.join("spec.txt");
    let text = fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
    let spec = SceneSpec::from_kv(&KvRecord::parse(&text)?)?;
    let pair = ScenePair {
        a: load_image(dir.join("a.png"))?,
        b: load_image(dir.join("b.png"))?,
        mask: DominanceMask::from_image(&load_image(dir.join("mask.pgm"))?)?,
    };
    Ok((spec, pair))
}
