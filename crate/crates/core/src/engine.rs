//! Loss maps, relative dominability weights, weighted feature fusion and the
//! two-stage test-time pipeline.
//!
//! Stage 1 feeds every source alone through the frozen codec and measures the
//! per-pixel reconstruction loss `l_m = |D(E(x_m)) - x_m|` (channel mean).
//! The relative dominability of source `m` is the softmax over sources of
//! `exp(-l_m)`, so a source that its own reconstruction reproduces well gets
//! more weight. Stage 2 fuses `D(sum_m w_m * E(x_m))` with those weights
//! broadcast over feature channels.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::codec::{loss_gradients, Codec, FeatureMap};
use crate::image::{blur_plane, save_png16, ImageTensor, Plane};
use crate::sum::{self, NeumaierSum};
use crate::{Error, Result};

/// Tolerance on the per-pixel weight sum of normalized forms.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Per-pixel, non-negative reconstruction deficiency of one source.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMap(Plane);

impl LossMap {
    pub fn new(plane: Plane) -> Result<Self> {
        if let Some(v) = plane.data().iter().find(|&&v| v < 0.0) {
            return Err(Error::InvalidValue(format!("negative loss {v}")));
        }
        Ok(Self(plane))
    }

    pub fn plane(&self) -> &Plane {
        &self.0
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn mean(&self) -> f64 {
        self.0.mean()
    }
}

/// Per-pixel fusion weights for `M` sources, stored source-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    height: usize,
    width: usize,
    sources: usize,
    data: Vec<f64>,
}

impl WeightMap {
    pub fn new(height: usize, width: usize, sources: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidDimensions(format!("weight map {height}x{width}")));
        }
        if sources < 2 {
            return Err(Error::InvalidParameter(format!(
                "weights need at least two sources, got {sources}"
            )));
        }
        if data.len() != height * width * sources {
            return Err(Error::ShapeMismatch(format!(
                "{sources} weight planes of {height}x{width} need {} values, got {}",
                height * width * sources,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite weight {v}")));
        }
        Ok(Self {
            height,
            width,
            sources,
            data,
        })
    }

    pub fn uniform(height: usize, width: usize, sources: usize) -> Result<Self> {
        Self::new(height, width, sources, vec![1.0 / sources as f64; height * width * sources])
    }

    /// Spatially constant weights, one per source.
    pub fn from_scalars(height: usize, width: usize, weights: &[f64]) -> Result<Self> {
        let data = weights
            .iter()
            .flat_map(|&w| std::iter::repeat_n(w, height * width))
            .collect();
        Self::new(height, width, weights.len(), data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn sources(&self) -> usize {
        self.sources
    }

    pub fn get(&self, source: usize, y: usize, x: usize) -> f64 {
        self.data[source * self.height * self.width + y * self.width + x]
    }

    /// Weights of one source, row-major.
    pub fn source(&self, source: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[source * n..(source + 1) * n]
    }

    pub fn source_plane(&self, source: usize) -> Plane {
        Plane::new(self.height, self.width, self.source(source).to_vec())
            .expect("weights are finite by construction")
    }

    /// Largest `|sum_m w_m - 1|` over pixels.
    pub fn max_sum_deviation(&self) -> f64 {
        let n = self.height * self.width;
        (0..n)
            .map(|p| {
                let s: f64 = (0..self.sources).map(|m| self.data[m * n + p]).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn is_normalized(&self) -> bool {
        self.max_sum_deviation() <= NORMALIZATION_TOLERANCE
    }

    /// Reorders source planes: output source `i` is input source `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.sources {
            return Err(Error::ShapeMismatch("permutation length".into()));
        }
        let data = order.iter().flat_map(|&m| self.source(m).iter().copied()).collect();
        Self::new(self.height, self.width, self.sources, data)
    }
}

/// Score applied to each per-pixel loss before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightVariant {
    /// `exp(-l)`: relative dominability.
    ExpRd,
    /// `-l`.
    Plain,
    /// `sigmoid(-l)`.
    Sigmoid,
    /// Constant `1/M`, independent of the losses.
    Static,
    /// `-exp(-l)`: positively correlated control, the mirror image of `ExpRd`.
    PositiveCorrelated,
    /// `exp(-|g|)` over a selected channel of the feature gradients.
    Gradient,
}

impl WeightVariant {
    pub const ALL: [WeightVariant; 6] = [
        WeightVariant::ExpRd,
        WeightVariant::Plain,
        WeightVariant::Sigmoid,
        WeightVariant::Static,
        WeightVariant::PositiveCorrelated,
        WeightVariant::Gradient,
    ];

    fn score(self, loss: f64, sources: usize) -> f64 {
        match self {
            WeightVariant::ExpRd | WeightVariant::Gradient => (-loss).exp(),
            WeightVariant::Plain => -loss,
            WeightVariant::Sigmoid => 1.0 / (1.0 + loss.exp()),
            WeightVariant::Static => 1.0 / sources as f64,
            WeightVariant::PositiveCorrelated => -(-loss).exp(),
        }
    }
}

impl fmt::Display for WeightVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightVariant::ExpRd => "rd",
            WeightVariant::Plain => "plain",
            WeightVariant::Sigmoid => "sigmoid",
            WeightVariant::Static => "static",
            WeightVariant::PositiveCorrelated => "pc",
            WeightVariant::Gradient => "grad",
        })
    }
}

impl FromStr for WeightVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeightVariant::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown weight form {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Normalization {
    Softmax,
    /// `s_m / sum s`, defined only where every score is positive.
    Proportional,
    /// Raw scores. Fusion with these requires an explicit force flag.
    None,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::Softmax => "softmax",
            Normalization::Proportional => "prop",
            Normalization::None => "none",
        })
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Normalization::Softmax),
            "prop" | "proportional" => Ok(Normalization::Proportional),
            "none" => Ok(Normalization::None),
            other => Err(Error::InvalidParameter(format!("unknown normalization {other:?}"))),
        }
    }
}

/// How the gradient variant picks its feature channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ChannelRule {
    /// Channel whose `|G|` has the largest spatial variance, averaged over
    /// sources and calibration items.
    #[default]
    MaxVariance,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightForm {
    pub variant: WeightVariant,
    pub normalization: Normalization,
    pub channel: ChannelRule,
    /// Optional Gaussian pre-smoothing of loss maps (sigma). Off by default.
    pub presmooth: Option<f64>,
}

impl WeightForm {
    pub fn new(variant: WeightVariant) -> Self {
        Self {
            variant,
            normalization: Normalization::Softmax,
            channel: ChannelRule::MaxVariance,
            presmooth: None,
        }
    }

    pub fn rd() -> Self {
        Self::new(WeightVariant::ExpRd)
    }

    pub fn static_uniform() -> Self {
        Self::new(WeightVariant::Static)
    }

    pub fn positive_correlated() -> Self {
        Self::new(WeightVariant::PositiveCorrelated)
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn with_channel(mut self, channel: ChannelRule) -> Self {
        self.channel = channel;
        self
    }

    /// e.g. `rd/softmax`.
    pub fn label(&self) -> String {
        format!("{}/{}", self.variant, self.normalization)
    }
}

impl fmt::Display for WeightForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Channel-mean absolute difference between `x` and its reconstruction.
pub fn unisource_loss_map(codec: &Codec, x: &ImageTensor) -> Result<LossMap> {
    let recon = codec.reconstruct(x)?;
    LossMap::new(abs_diff_map(&recon, x)?)
}

/// Per-pixel channel-mean `|a - b|`.
pub fn abs_diff_map(a: &ImageTensor, b: &ImageTensor) -> Result<Plane> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let c = a.channels();
    let data = a
        .data()
        .chunks_exact(c)
        .zip(b.data().chunks_exact(c))
        .map(|(pa, pb)| pa.iter().zip(pb).map(|(u, v)| (u - v).abs()).sum::<f64>() / c as f64)
        .collect();
    Plane::new(a.height(), a.width(), data)
}

fn check_loss_shapes(losses: &[LossMap]) -> Result<(usize, usize)> {
    if losses.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "weights need at least two sources, got {}",
            losses.len()
        )));
    }
    let (h, w) = (losses[0].height(), losses[0].width());
    if losses.iter().any(|l| l.height() != h || l.width() != w) {
        return Err(Error::ShapeMismatch("loss maps differ in size".into()));
    }
    Ok((h, w))
}

/// Turns per-source loss maps into per-pixel weights.
pub fn compute_weights(losses: &[LossMap], form: &WeightForm) -> Result<WeightMap> {
    let (h, w) = check_loss_shapes(losses)?;
    let smoothed: Vec<Plane>;
    let planes: Vec<&[f64]> = match form.presmooth {
        Some(sigma) => {
            smoothed = losses
                .iter()
                .map(|l| blur_plane(l.plane(), sigma))
                .collect::<Result<_>>()?;
            smoothed.iter().map(Plane::data).collect()
        }
        None => losses.iter().map(LossMap::data).collect(),
    };
    let sources = losses.len();
    let n = h * w;
    let mut data = vec![0.0; n * sources];
    let mut scores = vec![0.0; sources];
    for p in 0..n {
        for (s, plane) in scores.iter_mut().zip(&planes) {
            *s = form.variant.score(plane[p], sources);
        }
        normalize(&mut scores, form.normalization)?;
        for (m, &s) in scores.iter().enumerate() {
            data[m * n + p] = s;
        }
    }
    WeightMap::new(h, w, sources, data)
}

fn normalize(scores: &mut [f64], normalization: Normalization) -> Result<()> {
    match normalization {
        Normalization::Softmax => {
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                total += *s;
            }
            for s in scores.iter_mut() {
                *s /= total;
            }
        }
        Normalization::Proportional => {
            if let Some(s) = scores.iter().find(|&&s| s <= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "proportional normalization needs positive scores, got {s}"
                )));
            }
            let total: f64 = scores.iter().sum();
            for s in scores.iter_mut() {
                *s /= total;
            }
        }
        Normalization::None => {}
    }
    Ok(())
}

/// Picks the feature-gradient channel with the largest spatial variance of
/// `|G|`, averaged over every map in the calibration set. Ties go to the
/// lowest index.
pub fn select_gradient_channel(calibration: &[FeatureMap]) -> Result<usize> {
    let first = calibration
        .first()
        .ok_or_else(|| Error::Empty("no gradient maps to calibrate on".into()))?;
    let k = first.channels();
    if calibration.iter().any(|g| g.channels() != k) {
        return Err(Error::ShapeMismatch("gradient maps differ in channel count".into()));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for c in 0..k {
        let mut acc = NeumaierSum::new();
        for g in calibration {
            let abs: Vec<f64> = g.channel_plane(c).data().iter().map(|v| v.abs()).collect();
            acc.add(sum::covariance(&abs, &abs));
        }
        let score = acc.total() / calibration.len() as f64;
        if score > best.1 {
            best = (c, score);
        }
    }
    Ok(best.0)
}

/// Relative dominability from feature gradients: softmax over sources of
/// `exp(-|g_c|)` for the chosen channel `c`.
pub fn gradient_rd(feature_grads: &[FeatureMap], channel: usize) -> Result<WeightMap> {
    let first = feature_grads
        .first()
        .ok_or_else(|| Error::Empty("no gradient maps".into()))?;
    if feature_grads.iter().any(|g| g.shape() != first.shape()) {
        return Err(Error::ShapeMismatch("gradient maps differ in shape".into()));
    }
    if channel >= first.channels() {
        return Err(Error::InvalidParameter(format!(
            "gradient channel {channel} out of range (K = {})",
            first.channels()
        )));
    }
    let magnitudes = feature_grads
        .iter()
        .map(|g| {
            let abs = g.channel_plane(channel).data().iter().map(|v| v.abs()).collect();
            LossMap::new(Plane::new(g.height(), g.width(), abs)?)
        })
        .collect::<Result<Vec<_>>>()?;
    compute_weights(&magnitudes, &WeightForm::new(WeightVariant::Gradient))
}

/// `D(sum_m w_m * E(x_m))`, each weight plane broadcast over feature channels.
pub fn fuse(codec: &Codec, features: &[FeatureMap], weights: &WeightMap, force: bool) -> Result<ImageTensor> {
    if features.len() != weights.sources() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature maps but {} weight planes",
            features.len(),
            weights.sources()
        )));
    }
    let first = &features[0];
    if features.iter().any(|f| f.shape() != first.shape()) {
        return Err(Error::ShapeMismatch("feature maps differ in shape".into()));
    }
    if (first.height(), first.width()) != (weights.height(), weights.width()) {
        return Err(Error::ShapeMismatch("weights and features differ in size".into()));
    }
    if !force {
        let deviation = weights.max_sum_deviation();
        if deviation > NORMALIZATION_TOLERANCE {
            return Err(Error::Unnormalized { deviation });
        }
    }
    let k = first.channels();
    let mut fused = vec![0.0; first.data().len()];
    for (m, f) in features.iter().enumerate() {
        let wm = weights.source(m);
        for (p, (dst, src)) in fused.chunks_exact_mut(k).zip(f.data().chunks_exact(k)).enumerate() {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wm[p] * s;
            }
        }
    }
    codec.decode(&FeatureMap::new(first.height(), first.width(), k, fused)?)
}

/// Distance used by the fusion loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionNorm {
    /// Mean absolute error over all values.
    #[default]
    Mae,
    /// Root mean square error over all values.
    Rms,
}

impl FromStr for FusionNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mae" => Ok(FusionNorm::Mae),
            "rms" => Ok(FusionNorm::Rms),
            other => Err(Error::InvalidParameter(format!("unknown fusion norm {other:?}"))),
        }
    }
}

pub fn distance(a: &ImageTensor, b: &ImageTensor, norm: FusionNorm) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let n = a.data().len() as f64;
    let pairs = a.data().iter().zip(b.data());
    Ok(match norm {
        FusionNorm::Mae => sum::sum(pairs.map(|(u, v)| (u - v).abs())) / n,
        FusionNorm::Rms => (sum::sum(pairs.map(|(u, v)| (u - v) * (u - v))) / n).sqrt(),
    })
}

/// `sum_m ||fused - x_m||`.
pub fn fusion_loss(fused: &ImageTensor, sources: &[ImageTensor], norm: FusionNorm) -> Result<f64> {
    if sources.is_empty() {
        return Err(Error::Empty("fusion loss needs sources".into()));
    }
    let terms = sources
        .iter()
        .map(|x| distance(fused, x, norm))
        .collect::<Result<Vec<_>>>()?;
    Ok(sum::sum(terms))
}

fn check_sources(sources: &[ImageTensor]) -> Result<()> {
    if sources.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "fusion needs at least two sources, got {}",
            sources.len()
        )));
    }
    if sources.iter().any(|x| !x.same_shape(&sources[0])) {
        return Err(Error::ShapeMismatch("sources differ in shape".into()));
    }
    Ok(())
}

/// Stage 1: uni-source loss maps and the weights derived from them.
pub fn stage_one(codec: &Codec, sources: &[ImageTensor], form: &WeightForm) -> Result<(WeightMap, Vec<LossMap>)> {
    check_sources(sources)?;
    let losses = sources
        .iter()
        .map(|x| unisource_loss_map(codec, x))
        .collect::<Result<Vec<_>>>()?;
    let weights = if form.variant == WeightVariant::Gradient {
        let grads = sources
            .iter()
            .map(|x| loss_gradients(codec, x).map(|g| g.features))
            .collect::<Result<Vec<_>>>()?;
        let channel = match form.channel {
            ChannelRule::Fixed(c) => c,
            ChannelRule::MaxVariance => select_gradient_channel(&grads)?,
        };
        gradient_rd(&grads, channel)?
    } else {
        compute_weights(&losses, form)?
    };
    Ok((weights, losses))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub fused: ImageTensor,
    pub weights: WeightMap,
    pub losses: Vec<LossMap>,
}

/// Both stages: weights from uni-source reconstructions, then weighted
/// feature fusion and decoding.
pub fn run_pipeline(codec: &Codec, sources: &[ImageTensor], form: &WeightForm, force: bool) -> Result<PipelineOutput> {
    let (weights, losses) = stage_one(codec, sources, form)?;
    let features = sources
        .iter()
        .map(|x| codec.encode(x))
        .collect::<Result<Vec<_>>>()?;
    let fused = fuse(codec, &features, &weights, force)?;
    Ok(PipelineOutput {
        fused,
        weights,
        losses,
    })
}

/// Raw map file: `H`, `W` as little-endian `u32`, then `H*W` little-endian
/// `f32` values, row-major.
pub fn write_raw_map(plane: &Plane, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + 4 * plane.data().len());
    bytes.extend_from_slice(&(plane.height() as u32).to_le_bytes());
    bytes.extend_from_slice(&(plane.width() as u32).to_le_bytes());
    for &v in plane.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_raw_map(path: &Path) -> Result<Plane> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |message: &str| Error::Malformed {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if bytes.len() < 8 {
        return Err(malformed("missing header"));
    }
    let h = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let w = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 8 + 4 * h * w {
        return Err(malformed("body length does not match header"));
    }
    let data = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Plane::new(h, w, data)
}

/// 16-bit PNG value for a weight: `round(w * 65535)`.
pub fn weight_to_u16(w: f64) -> u16 {
    (w.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Writes `w{m}.png`, `w{m}.f32` and `loss{m}.f32` for every source into
/// `dir`, returning the paths written.
pub fn export_weights(dir: &Path, weights: &WeightMap, losses: &[LossMap]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for m in 0..weights.sources() {
        let png = dir.join(format!("w{m}.png"));
        let values: Vec<u16> = weights.source(m).iter().map(|&w| weight_to_u16(w)).collect();
        save_png16(&values, weights.width(), weights.height(), &png)?;
        written.push(png);
        let raw = dir.join(format!("w{m}.f32"));
        write_raw_map(&weights.source_plane(m), &raw)?;
        written.push(raw);
    }
    for (m, loss) in losses.iter().enumerate() {
        let raw = dir.join(format!("loss{m}.f32"));
        write_raw_map(loss.plane(), &raw)?;
        written.push(raw);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CodecSpec;

    fn loss(values: &[f64], h: usize, w: usize) -> LossMap {
        LossMap::new(Plane::new(h, w, values.to_vec()).unwrap()).unwrap()
    }

    fn single(v: f64) -> LossMap {
        loss(&[v], 1, 1)
    }

    #[test]
    fn equal_losses_split_evenly() {
        let w = compute_weights(&[single(0.0), single(0.0)], &WeightForm::rd()).unwrap();
        assert_eq!(w.get(0, 0, 0), 0.5);
        assert_eq!(w.get(1, 0, 0), 0.5);
    }

    #[test]
    fn saturated_loss_gives_softmax_of_one_and_zero() {
        let e = std::f64::consts::E;
        let w = compute_weights(&[single(0.0), single(1e6)], &WeightForm::rd()).unwrap();
        assert!((w.get(0, 0, 0) - e / (e + 1.0)).abs() < 1e-12);
        assert!((w.get(0, 0, 0) - 0.7311).abs() < 1e-4);
        let pc = compute_weights(&[single(0.0), single(1e6)], &WeightForm::positive_correlated()).unwrap();
        assert!((pc.get(0, 0, 0) - 1.0 / (e + 1.0)).abs() < 1e-12);
        assert!((pc.get(1, 0, 0) - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn static_is_uniform_for_every_normalization() {
        let losses = [loss(&[0.1, 0.9], 1, 2), loss(&[0.5, 0.0], 1, 2), loss(&[0.3, 0.3], 1, 2)];
        for norm in [Normalization::Softmax, Normalization::Proportional, Normalization::None] {
            let w = compute_weights(&losses, &WeightForm::static_uniform().with_normalization(norm)).unwrap();
            assert!(w.source(2).iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        }
    }

    #[test]
    fn proportional_needs_positive_scores() {
        let losses = [single(0.2), single(0.1)];
        let plain = WeightForm::new(WeightVariant::Plain).with_normalization(Normalization::Proportional);
        assert!(compute_weights(&losses, &plain).is_err());
        let pc = WeightForm::positive_correlated().with_normalization(Normalization::Proportional);
        assert!(compute_weights(&losses, &pc).is_err());
        let rd = WeightForm::rd().with_normalization(Normalization::Proportional);
        let w = compute_weights(&losses, &rd).unwrap();
        let (a, b) = ((-0.2f64).exp(), (-0.1f64).exp());
        assert!((w.get(0, 0, 0) - a / (a + b)).abs() < 1e-15);
    }

    #[test]
    fn raw_scores_are_unnormalized() {
        let w = compute_weights(&[single(0.0), single(0.0)], &WeightForm::rd().with_normalization(Normalization::None)).unwrap();
        assert_eq!(w.get(0, 0, 0), 1.0);
        assert!(!w.is_normalized());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(compute_weights(&[single(0.0)], &WeightForm::rd()).is_err());
        assert!(compute_weights(&[single(0.0), loss(&[0.0, 0.0], 1, 2)], &WeightForm::rd()).is_err());
        assert!(LossMap::new(Plane::new(1, 1, vec![-0.1]).unwrap()).is_err());
    }

    #[test]
    fn presmoothing_changes_only_when_enabled() {
        let a = loss(&[0.0, 0.0, 0.0, 1.0], 2, 2);
        let b = loss(&[0.0; 4], 2, 2);
        let raw = compute_weights(&[a.clone(), b.clone()], &WeightForm::rd()).unwrap();
        let mut form = WeightForm::rd();
        form.presmooth = Some(1.0);
        let smooth = compute_weights(&[a, b], &form).unwrap();
        assert!(smooth.get(0, 0, 0) < raw.get(0, 0, 0));
        assert!(smooth.is_normalized());
    }

    #[test]
    fn gradient_rd_uniform_for_zero_gradients() {
        let g = FeatureMap::new(2, 2, 3, vec![0.0; 12]).unwrap();
        let w = gradient_rd(&[g.clone(), g], 1).unwrap();
        assert!(w.source(0).iter().all(|&v| v == 0.5));
    }

    #[test]
    fn gradient_rd_closed_form_and_channel_override() {
        // channel 1 differs between sources, channel 0 is garbage that must be ignored
        let a = FeatureMap::new(1, 1, 2, vec![123.0, 0.0]).unwrap();
        let b = FeatureMap::new(1, 1, 2, vec![-7.0, -1e6]).unwrap();
        let w = gradient_rd(&[a.clone(), b.clone()], 1).unwrap();
        let e = std::f64::consts::E;
        assert!((w.get(0, 0, 0) - e / (e + 1.0)).abs() < 1e-12);
        let a2 = FeatureMap::new(1, 1, 2, vec![-55.0, 0.0]).unwrap();
        assert_eq!(gradient_rd(&[a2, b.clone()], 1).unwrap(), w);
        assert!(gradient_rd(&[a, b], 2).is_err());
    }

    #[test]
    fn channel_selection_prefers_spatial_variance() {
        let g = FeatureMap::new(1, 4, 2, vec![1.0, 0.0, 1.0, 5.0, 1.0, 0.0, 1.0, -5.0]).unwrap();
        assert_eq!(select_gradient_channel(&[g]).unwrap(), 1);
        assert!(select_gradient_channel(&[]).is_err());
    }

    #[test]
    fn fuse_identity_codec_arithmetic() {
        let codec = Codec::constant();
        let x1 = ImageTensor::filled(3, 3, 1, 0.0).unwrap();
        let x2 = ImageTensor::filled(3, 3, 1, 1.0).unwrap();
        let feats = [codec.encode(&x1).unwrap(), codec.encode(&x2).unwrap()];
        let w = WeightMap::from_scalars(3, 3, &[0.25, 0.75]).unwrap();
        let out = fuse(&codec, &feats, &w, false).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn fuse_refuses_unnormalized_unless_forced() {
        let codec = Codec::constant();
        let x = ImageTensor::filled(2, 2, 1, 0.3).unwrap();
        let feats = [codec.encode(&x).unwrap(), codec.encode(&x).unwrap()];
        let w = WeightMap::from_scalars(2, 2, &[0.9, 0.9]).unwrap();
        assert!(matches!(fuse(&codec, &feats, &w, false), Err(Error::Unnormalized { .. })));
        let out = fuse(&codec, &feats, &w, true).unwrap();
        assert!((out.data()[0] - 0.54).abs() < 1e-12);
    }

    #[test]
    fn one_hot_weights_select_a_source() {
        let codec = Codec::new(CodecSpec::pyramid(2, 0.05), None).unwrap();
        let a = ImageTensor::from_fn(8, 8, 1, |y, x, _| ((x + 2 * y) % 5) as f64 / 4.0).unwrap();
        let b = ImageTensor::from_fn(8, 8, 1, |y, _, _| y as f64 / 7.0).unwrap();
        let feats = [codec.encode(&a).unwrap(), codec.encode(&b).unwrap()];
        let w = WeightMap::from_scalars(8, 8, &[0.0, 1.0]).unwrap();
        assert_eq!(fuse(&codec, &feats, &w, false).unwrap(), codec.decode(&feats[1]).unwrap());
    }

    #[test]
    fn fusion_loss_arithmetic() {
        let f = ImageTensor::filled(2, 3, 1, 0.5).unwrap();
        let x1 = ImageTensor::filled(2, 3, 1, 0.0).unwrap();
        let x2 = ImageTensor::filled(2, 3, 1, 1.0).unwrap();
        assert_eq!(fusion_loss(&f, &[x1.clone(), x2.clone()], FusionNorm::Mae).unwrap(), 1.0);
        assert_eq!(fusion_loss(&f, &[x2.clone(), x1.clone()], FusionNorm::Rms).unwrap(), 1.0);
        assert_eq!(fusion_loss(&x1, &[x1.clone(), x1.clone()], FusionNorm::Mae).unwrap(), 0.0);
        let odd = ImageTensor::filled(3, 3, 1, 0.0).unwrap();
        assert!(fusion_loss(&f, &[odd], FusionNorm::Mae).is_err());
    }

    #[test]
    fn raw_map_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.f32");
        let plane = Plane::new(2, 3, vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.125]).unwrap();
        write_raw_map(&plane, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], &[2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(read_raw_map(&path).unwrap(), plane);
    }

    #[test]
    fn export_writes_every_file() {
        let dir = tempfile::tempdir().unwrap();
        let w = WeightMap::from_scalars(2, 2, &[0.25, 0.75]).unwrap();
        let l = [loss(&[0.0; 4], 2, 2), loss(&[0.5; 4], 2, 2)];
        let files = export_weights(dir.path(), &w, &l).unwrap();
        assert_eq!(files.len(), 6);
        assert!(files.iter().all(|f| f.exists()));
        assert_eq!(weight_to_u16(0.25), 16384);
        assert_eq!(weight_to_u16(1.0), 65535);
    }
}
