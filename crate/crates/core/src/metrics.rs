//! Fusion quality metrics.
//!
//! Every metric works on grayscale (BT.601 luma for RGB input). SD, AG, EI,
//! SF and SSIM use 0–255 intensities; EN and CE use the 256-bin histogram.
//! Absolute values depend on the conventions fixed here:
//!
//! | metric | definition |
//! |---|---|
//! | EN | `-sum p log2 p` over the normalized histogram |
//! | CE | mean over sources of `KL(h_src ‖ h_F)` in bits, each histogram smoothed by `+1e-12` then renormalized |
//! | SCD | `r(F - A, B) + r(F - B, A)` (Pearson); undefined for zero variance or `M != 2` |
//! | SD | population standard deviation |
//! | AG | mean over the `(H-1)(W-1)` top-left pixels of `sqrt((dx² + dy²) / 2)`, forward differences |
//! | EI | mean Sobel magnitude, replicated borders |
//! | SF | `sqrt(RF² + CF²)`, each the RMS of horizontal / vertical forward differences |
//! | SSIM | mean over sources of the mean local SSIM, 11×11 Gaussian window (σ = 1.5, symmetric-reflected borders), `C1 = (0.01·255)²`, `C2 = (0.03·255)²` |

use crate::image::{convolve_separable, gaussian_kernel, histogram256, sobel_plane, to_grayscale, ImageTensor, Plane};
use crate::sum::{self, NeumaierSum};
use crate::{Error, Result};

/// Additive histogram smoothing used by [`ce`].
pub const CE_EPSILON: f64 = 1e-12;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// The eight scores of one fused result, in CSV column order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricRow {
    pub id: String,
    pub en: f64,
    pub sd: f64,
    pub ag: f64,
    pub ei: f64,
    pub sf: f64,
    /// `None` where undefined.
    pub scd: Option<f64>,
    pub ce: f64,
    pub ssim: f64,
}

impl MetricRow {
    pub const HEADER: [&'static str; 9] = ["id", "EN", "SD", "AG", "EI", "SF", "SCD", "CE", "SSIM"];

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// CSV fields with `.` decimals and fixed precision; missing SCD is `NA`.
    pub fn csv_fields(&self) -> [String; 9] {
        let f = |v: f64| format!("{v:.6}");
        [
            self.id.clone(),
            f(self.en),
            f(self.sd),
            f(self.ag),
            f(self.ei),
            f(self.sf),
            self.scd.map_or_else(|| "NA".to_string(), f),
            f(self.ce),
            f(self.ssim),
        ]
    }

    /// Field-wise mean; SCD averages the defined entries only.
    pub fn mean(rows: &[MetricRow]) -> Result<MetricRow> {
        if rows.is_empty() {
            return Err(Error::Empty("no metric rows to average".into()));
        }
        let n = rows.len() as f64;
        let avg = |f: fn(&MetricRow) -> f64| sum::sum(rows.iter().map(f)) / n;
        let scds: Vec<f64> = rows.iter().filter_map(|r| r.scd).collect();
        Ok(MetricRow {
            id: String::new(),
            en: avg(|r| r.en),
            sd: avg(|r| r.sd),
            ag: avg(|r| r.ag),
            ei: avg(|r| r.ei),
            sf: avg(|r| r.sf),
            scd: (!scds.is_empty()).then(|| sum::mean(&scds)),
            ce: avg(|r| r.ce),
            ssim: avg(|r| r.ssim),
        })
    }
}

/// Grayscale plane on the 0–255 scale.
fn gray255(img: &ImageTensor) -> Plane {
    let g = to_grayscale(img);
    Plane::new(g.height(), g.width(), g.data().iter().map(|v| v * 255.0).collect())
        .expect("finite by construction")
}

fn normalized_hist(img: &ImageTensor) -> [f64; 256] {
    histogram256(&to_grayscale(img))
        .expect("grayscale input")
        .normalized()
}

fn check_sources(f: &ImageTensor, sources: &[ImageTensor]) -> Result<()> {
    if sources.is_empty() {
        return Err(Error::Empty("metric needs at least one source".into()));
    }
    for s in sources {
        if (s.height(), s.width()) != (f.height(), f.width()) {
            return Err(Error::ShapeMismatch(format!(
                "fused {}x{} vs source {}x{}",
                f.height(),
                f.width(),
                s.height(),
                s.width()
            )));
        }
    }
    Ok(())
}

pub fn en(f: &ImageTensor) -> f64 {
    let mut acc = NeumaierSum::new();
    for p in normalized_hist(f) {
        if p > 0.0 {
            acc.add(-p * p.log2());
        }
    }
    // -0.0 for a single occupied bin
    acc.total().max(0.0)
}

pub fn ce(f: &ImageTensor, sources: &[ImageTensor]) -> Result<f64> {
    check_sources(f, sources)?;
    let smooth = |h: [f64; 256]| {
        let z = 1.0 + 256.0 * CE_EPSILON;
        h.map(|p| (p + CE_EPSILON) / z)
    };
    let q = smooth(normalized_hist(f));
    let mut total = NeumaierSum::new();
    for s in sources {
        let p = smooth(normalized_hist(s));
        let mut kl = NeumaierSum::new();
        for (pi, qi) in p.iter().zip(&q) {
            kl.add(pi * (pi / qi).log2());
        }
        total.add(kl.total().max(0.0));
    }
    Ok(total.total() / sources.len() as f64)
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let vab = sum::covariance(a, b);
    let va = sum::covariance(a, a);
    let vb = sum::covariance(b, b);
    if va <= 0.0 || vb <= 0.0 {
        return None;
    }
    Some((vab / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// `None` when either correlation is undefined.
pub fn scd(f: &ImageTensor, a: &ImageTensor, b: &ImageTensor) -> Result<Option<f64>> {
    check_sources(f, &[a.clone(), b.clone()])?;
    let (f, a, b) = (gray255(f), gray255(a), gray255(b));
    let diff = |x: &Plane| -> Vec<f64> { f.data().iter().zip(x.data()).map(|(u, v)| u - v).collect() };
    let r1 = pearson(&diff(&a), b.data());
    let r2 = pearson(&diff(&b), a.data());
    Ok(r1.zip(r2).map(|(x, y)| x + y))
}

pub fn sd(f: &ImageTensor) -> f64 {
    let g = gray255(f);
    sum::covariance(g.data(), g.data()).max(0.0).sqrt()
}

pub fn ag(f: &ImageTensor) -> f64 {
    let g = gray255(f);
    let (h, w) = (g.height(), g.width());
    if h < 2 || w < 2 {
        return 0.0;
    }
    let mut acc = NeumaierSum::new();
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let dx = g.get(y, x + 1) - g.get(y, x);
            let dy = g.get(y + 1, x) - g.get(y, x);
            acc.add(((dx * dx + dy * dy) / 2.0).sqrt());
        }
    }
    acc.total() / ((h - 1) * (w - 1)) as f64
}

pub fn ei(f: &ImageTensor) -> f64 {
    sobel_plane(&gray255(f)).mean()
}

pub fn sf(f: &ImageTensor) -> f64 {
    let g = gray255(f);
    let (h, w) = (g.height(), g.width());
    let mean_sq = |pairs: Vec<(f64, f64)>| {
        if pairs.is_empty() {
            0.0
        } else {
            let n = pairs.len() as f64;
            sum::sum(pairs.into_iter().map(|(u, v)| (u - v) * (u - v))) / n
        }
    };
    let rows = (0..h)
        .flat_map(|y| (1..w).map(move |x| (y, x)))
        .map(|(y, x)| (g.get(y, x), g.get(y, x - 1)))
        .collect();
    let cols = (1..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .map(|(y, x)| (g.get(y, x), g.get(y - 1, x)))
        .collect();
    (mean_sq(rows) + mean_sq(cols)).sqrt()
}

/// Mean local SSIM between two planes on the 0–255 scale.
fn ssim_pair(x: &Plane, y: &Plane, kernel: &[f64]) -> f64 {
    let (h, w) = (x.height(), x.width());
    let blur = |v: Vec<f64>| convolve_separable(&v, h, w, 1, kernel);
    let xd = x.data();
    let yd = y.data();
    let mx = blur(xd.to_vec());
    let my = blur(yd.to_vec());
    let mxx = blur(xd.iter().map(|v| v * v).collect());
    let myy = blur(yd.iter().map(|v| v * v).collect());
    let mxy = blur(xd.iter().zip(yd).map(|(a, b)| a * b).collect());
    let mut acc = NeumaierSum::new();
    for i in 0..h * w {
        let vx = mxx[i] - mx[i] * mx[i];
        let vy = myy[i] - my[i] * my[i];
        let cxy = mxy[i] - mx[i] * my[i];
        let num = (2.0 * mx[i] * my[i] + SSIM_C1) * (2.0 * cxy + SSIM_C2);
        let den = (mx[i] * mx[i] + my[i] * my[i] + SSIM_C1) * (vx + vy + SSIM_C2);
        acc.add(num / den);
    }
    acc.total() / (h * w) as f64
}

pub fn ssim(f: &ImageTensor, sources: &[ImageTensor]) -> Result<f64> {
    check_sources(f, sources)?;
    let kernel = gaussian_kernel(SSIM_SIGMA)?;
    let g = gray255(f);
    let scores: Vec<f64> = sources.iter().map(|s| ssim_pair(&g, &gray255(s), &kernel)).collect();
    Ok(sum::mean(&scores))
}

/// All eight metrics. SCD is only defined for exactly two sources.
pub fn evaluate_all(f: &ImageTensor, sources: &[ImageTensor]) -> Result<MetricRow> {
    check_sources(f, sources)?;
    let scd = match sources {
        [a, b] => scd(f, a, b)?,
        _ => None,
    };
    Ok(MetricRow {
        id: String::new(),
        en: en(f),
        sd: sd(f),
        ag: ag(f),
        ei: ei(f),
        sf: sf(f),
        scd,
        ce: ce(f, sources)?,
        ssim: ssim(f, sources)?,
    })
}
