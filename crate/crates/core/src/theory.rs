//! Empirical checks of the generalization-bound machinery: pooled
//! weight/loss covariance, the convexity step, the per-item bound
//! decomposition and strategy comparisons.
//!
//! The bound is evaluated per item with the mean-absolute norm, so every
//! `||a - b||` is the pixel mean of a channel-mean absolute-difference map.
//! With `l_im = |D(E(x_i)) - x_m|` the per-item bound is
//!
//! ```text
//! sum_m [ Cov_p(w_m, l_mm) + mean_p( (2M-1)/M * l_mm + (M-1)/M * sum_{i != m} l_im ) ]
//! ```
//!
//! where `Cov_p` is the population covariance over the item's pixels. The
//! second part depends only on the codec and the sources; it is the
//! strategy-independent constant.

use rayon::prelude::*;

use crate::codec::Codec;
use crate::engine::{abs_diff_map, distance, fusion_loss, run_pipeline, FusionNorm, LossMap, WeightForm, WeightMap};
use crate::image::ImageTensor;
use crate::metrics::{evaluate_all, MetricRow};
use crate::sum::{self, NeumaierSum};
use crate::{Error, Result};

/// Tolerance of [`convexity_check`].
pub const CONVEXITY_TOLERANCE: f64 = 1e-9;
/// Tolerance of the per-item bound check.
pub const BOUND_TOLERANCE: f64 = 1e-6;

/// Pooled population covariance between `w_m` and `l_m` over every pixel of
/// every item.
pub fn pixel_covariance(weights: &[WeightMap], losses: &[Vec<LossMap>], m: usize) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::Empty("no items to pool".into()));
    }
    if weights.len() != losses.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weight maps but {} loss tuples",
            weights.len(),
            losses.len()
        )));
    }
    let mut ws = Vec::new();
    let mut ls = Vec::new();
    for (w, l) in weights.iter().zip(losses) {
        if m >= w.sources() || m >= l.len() {
            return Err(Error::InvalidParameter(format!("source index {m} out of range")));
        }
        if (w.height(), w.width()) != (l[m].height(), l[m].width()) {
            return Err(Error::ShapeMismatch("weights and losses differ in size".into()));
        }
        ws.extend_from_slice(w.source(m));
        ls.extend_from_slice(l[m].data());
    }
    Ok(sum::covariance(&ws, &ls))
}

/// Weights for [`convexity_check`].
#[derive(Debug, Clone, PartialEq)]
pub enum SimplexWeights {
    Scalars(Vec<f64>),
    Map(WeightMap),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexityOutcome {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `lhs = ||sum_i w_i y_i - x||`, `rhs = sum_i ||w_i (y_i - x)||`.
///
/// For scalar weights `rhs` is `sum_i w_i ||y_i - x||`; for pixel weights
/// the weight stays inside the norm, which is what the triangle inequality
/// gives for either norm.
pub fn convexity_check(
    components: &[ImageTensor],
    x: &ImageTensor,
    weights: &SimplexWeights,
    norm: FusionNorm,
) -> Result<ConvexityOutcome> {
    if components.is_empty() {
        return Err(Error::Empty("no components".into()));
    }
    if components.iter().any(|y| !y.same_shape(x)) {
        return Err(Error::ShapeMismatch("components differ from the target".into()));
    }
    let (h, w, c) = x.shape();
    let n = h * w;
    let map = match weights {
        SimplexWeights::Scalars(s) => WeightMap::from_scalars(h, w, s)?,
        SimplexWeights::Map(m) => m.clone(),
    };
    if map.sources() != components.len() || (map.height(), map.width()) != (h, w) {
        return Err(Error::ShapeMismatch("weights do not match the components".into()));
    }
    let deviation = map.max_sum_deviation();
    if deviation > CONVEXITY_TOLERANCE {
        return Err(Error::Unnormalized { deviation });
    }
    if (0..map.sources()).any(|m| map.source(m).iter().any(|&v| v < 0.0)) {
        return Err(Error::InvalidValue("negative simplex weight".into()));
    }

    let reduce = |values: &mut dyn Iterator<Item = f64>| -> f64 {
        let total = (n * c) as f64;
        match norm {
            FusionNorm::Mae => sum::sum(values.map(f64::abs)) / total,
            FusionNorm::Rms => (sum::sum(values.map(|v| v * v)) / total).sqrt(),
        }
    };
    let mut combined = vec![0.0; n * c];
    let mut rhs = NeumaierSum::new();
    for (i, y) in components.iter().enumerate() {
        let wi = map.source(i);
        let mut scaled = (0..n * c).map(|k| wi[k / c] * (y.data()[k] - x.data()[k]));
        rhs.add(reduce(&mut scaled));
        for (k, acc) in combined.iter_mut().enumerate() {
            *acc += wi[k / c] * (y.data()[k] - x.data()[k]);
        }
    }
    // sum_i w_i (y_i - x) equals sum_i w_i y_i - x on the simplex, and is exactly 0 when every y_i = x
    let lhs = reduce(&mut combined.into_iter());
    let rhs = rhs.total();
    Ok(ConvexityOutcome {
        lhs,
        rhs,
        holds: lhs <= rhs + CONVEXITY_TOLERANCE,
    })
}

/// Both sides of the bound for one item under one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemBound {
    /// `sum_m ||I_F - x_m||` of the actual fused image.
    pub fusion_loss: f64,
    /// `sum_m ||sum_i w_i y_i - x_m||`: the loss after the convexity step.
    /// Not necessarily above `fusion_loss`: output clamping and spatial
    /// mixing in the decoder make that step approximate.
    pub convex_loss: f64,
    /// Pixel covariance `Cov(w_m, l_mm)` per source, within this item.
    pub covariance: Vec<f64>,
    /// Strategy-independent part of the bound.
    pub constant: f64,
    /// `sum(covariance) + constant`.
    pub bound: f64,
}

impl ItemBound {
    pub fn holds(&self) -> bool {
        self.fusion_loss <= self.bound + BOUND_TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyBound {
    pub form: WeightForm,
    pub items: Vec<ItemBound>,
    /// Pooled covariance per source across every pixel of every item.
    pub pooled_covariance: Vec<f64>,
    pub mean_fusion_loss: f64,
    pub mean_bound: f64,
}

impl StrategyBound {
    pub fn violations(&self) -> usize {
        self.items.iter().filter(|i| !i.holds()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GebReport {
    pub sources: usize,
    /// Dataset mean of the strategy-independent term `C`.
    pub constant: f64,
    pub strategies: Vec<StrategyBound>,
}

impl GebReport {
    pub const CSV_HEADER: [&'static str; 7] =
        ["strategy", "source", "pooled_cov", "mean_fusion_loss", "mean_bound", "constant", "violations"];

    /// One CSV record per (strategy, source).
    pub fn csv_records(&self) -> Vec<[String; 7]> {
        let mut out = Vec::new();
        for s in &self.strategies {
            for (m, cov) in s.pooled_covariance.iter().enumerate() {
                out.push([
                    s.form.label(),
                    m.to_string(),
                    format!("{cov:.9e}"),
                    format!("{:.9}", s.mean_fusion_loss),
                    format!("{:.9}", s.mean_bound),
                    format!("{:.9}", self.constant),
                    s.violations().to_string(),
                ]);
            }
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut text = format!(
            "sources: {}\nconstant term C (dataset mean): {:.6}\n",
            self.sources, self.constant
        );
        for s in &self.strategies {
            let covs: Vec<String> = s.pooled_covariance.iter().map(|c| format!("{c:+.3e}")).collect();
            text.push_str(&format!(
                "{}: mean fusion loss {:.6}, mean bound {:.6}, pooled Cov [{}], violations {}/{}\n",
                s.form.label(),
                s.mean_fusion_loss,
                s.mean_bound,
                covs.join(", "),
                s.violations(),
                s.items.len()
            ));
        }
        text
    }
}

fn check_dataset(dataset: &[Vec<ImageTensor>]) -> Result<usize> {
    let first = dataset.first().ok_or_else(|| Error::Empty("empty dataset".into()))?;
    let m = first.len();
    if m < 2 {
        return Err(Error::InvalidParameter(format!("need at least two sources, got {m}")));
    }
    if dataset.iter().any(|t| t.len() != m) {
        return Err(Error::ShapeMismatch("items differ in source count".into()));
    }
    Ok(m)
}

struct ItemTerms {
    recon: Vec<ImageTensor>,
    losses: Vec<LossMap>,
    constant: f64,
}

fn item_terms(codec: &Codec, sources: &[ImageTensor]) -> Result<ItemTerms> {
    let m = sources.len();
    let mf = m as f64;
    let recon = sources.iter().map(|x| codec.reconstruct(x)).collect::<Result<Vec<_>>>()?;
    let mut constant = NeumaierSum::new();
    let mut losses = Vec::with_capacity(m);
    for (j, x) in sources.iter().enumerate() {
        for (i, y) in recon.iter().enumerate() {
            let l = abs_diff_map(y, x)?.mean();
            let coeff = if i == j { (2.0 * mf - 1.0) / mf } else { (mf - 1.0) / mf };
            constant.add(coeff * l);
        }
        losses.push(LossMap::new(abs_diff_map(&recon[j], x)?)?);
    }
    Ok(ItemTerms {
        recon,
        losses,
        constant: constant.total(),
    })
}

fn item_bound(codec: &Codec, sources: &[ImageTensor], terms: &ItemTerms, form: &WeightForm) -> Result<(ItemBound, WeightMap)> {
    let out = run_pipeline(codec, sources, form, false)?;
    let w = &out.weights;
    let covariance: Vec<f64> = (0..sources.len())
        .map(|m| sum::covariance(w.source(m), terms.losses[m].data()))
        .collect();
    let (h, wd, c) = sources[0].shape();
    let mut combined = vec![0.0; h * wd * c];
    for (i, y) in terms.recon.iter().enumerate() {
        let wi = w.source(i);
        for (k, acc) in combined.iter_mut().enumerate() {
            *acc += wi[k / c] * y.data()[k];
        }
    }
    let combined = ImageTensor::from_clamped(h, wd, c, combined)?;
    let convex_loss = sum::sum(
        sources
            .iter()
            .map(|x| distance(&combined, x, FusionNorm::Mae))
            .collect::<Result<Vec<_>>>()?,
    );
    let bound = sum::sum(covariance.iter().copied()) + terms.constant;
    Ok((
        ItemBound {
            fusion_loss: fusion_loss(&out.fused, sources, FusionNorm::Mae)?,
            convex_loss,
            covariance,
            constant: terms.constant,
            bound,
        },
        out.weights,
    ))
}

/// Evaluates both sides of the bound on every item for every strategy.
/// Strategies must produce normalized weights.
pub fn geb_decomposition(codec: &Codec, dataset: &[Vec<ImageTensor>], forms: &[WeightForm]) -> Result<GebReport> {
    let m = check_dataset(dataset)?;
    if forms.is_empty() {
        return Err(Error::Empty("no strategies".into()));
    }
    let terms = dataset
        .par_iter()
        .map(|t| item_terms(codec, t))
        .collect::<Result<Vec<_>>>()?;
    let constant = sum::sum(terms.iter().map(|t| t.constant)) / dataset.len() as f64;
    let losses: Vec<Vec<LossMap>> = terms.iter().map(|t| t.losses.clone()).collect();
    let mut strategies = Vec::with_capacity(forms.len());
    for form in forms {
        let evaluated = dataset
            .par_iter()
            .zip(terms.par_iter())
            .map(|(t, terms)| item_bound(codec, t, terms, form))
            .collect::<Result<Vec<_>>>()?;
        let (items, weights): (Vec<ItemBound>, Vec<WeightMap>) = evaluated.into_iter().unzip();
        let pooled_covariance = (0..m)
            .map(|s| pixel_covariance(&weights, &losses, s))
            .collect::<Result<Vec<_>>>()?;
        let n = items.len() as f64;
        strategies.push(StrategyBound {
            form: *form,
            pooled_covariance,
            mean_fusion_loss: sum::sum(items.iter().map(|i| i.fusion_loss)) / n,
            mean_bound: sum::sum(items.iter().map(|i| i.bound)) / n,
            items,
        });
    }
    Ok(GebReport {
        sources: m,
        constant,
        strategies,
    })
}

/// Per-strategy aggregate of [`compare_strategies`].
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRow {
    pub form: WeightForm,
    /// Fusion loss of every item, in dataset order.
    pub item_losses: Vec<f64>,
    pub mean_loss: f64,
    /// Standard error of the mean over items.
    pub std_error: f64,
    /// Mean quality metrics, when requested.
    pub metrics: Option<MetricRow>,
}

impl StrategyRow {
    /// Mean and standard error of the per-item difference `self - other`.
    pub fn paired_difference(&self, other: &StrategyRow) -> Result<(f64, f64)> {
        if self.item_losses.len() != other.item_losses.len() {
            return Err(Error::ShapeMismatch("rows cover different items".into()));
        }
        let d: Vec<f64> = self.item_losses.iter().zip(&other.item_losses).map(|(a, b)| a - b).collect();
        Ok((sum::mean(&d), standard_error(&d)))
    }
}

/// Sample standard deviation over `sqrt(n)`; 0 for fewer than two values.
pub fn standard_error(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let var = sum::covariance(values, values) * n as f64 / (n - 1) as f64;
    (var.max(0.0) / n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareOptions {
    pub norm: FusionNorm,
    /// Fuse with unnormalized weights instead of failing.
    pub force_unnormalized: bool,
    pub metrics: bool,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            norm: FusionNorm::Mae,
            force_unnormalized: false,
            metrics: true,
        }
    }
}

/// Mean fusion loss (and optionally mean metrics) per strategy, rows in the
/// order the strategies were given.
pub fn compare_strategies(
    dataset: &[Vec<ImageTensor>],
    codec: &Codec,
    forms: &[WeightForm],
    opts: &CompareOptions,
) -> Result<Vec<StrategyRow>> {
    if dataset.is_empty() {
        return Err(Error::Empty("empty dataset".into()));
    }
    if forms.len() < 2 {
        return Err(Error::InvalidParameter("compare at least two strategies".into()));
    }
    forms
        .iter()
        .map(|form| {
            let force = opts.force_unnormalized;
            let per_item = dataset
                .par_iter()
                .map(|sources| {
                    let out = run_pipeline(codec, sources, form, force)?;
                    let loss = fusion_loss(&out.fused, sources, opts.norm)?;
                    let metrics = if opts.metrics {
                        Some(evaluate_all(&out.fused, sources)?)
                    } else {
                        None
                    };
                    Ok((loss, metrics))
                })
                .collect::<Result<Vec<_>>>()?;
            let (item_losses, metrics): (Vec<f64>, Vec<Option<MetricRow>>) = per_item.into_iter().unzip();
            let metrics = if opts.metrics {
                let rows: Vec<MetricRow> = metrics.into_iter().flatten().collect();
                Some(MetricRow::mean(&rows)?.with_id(form.label()))
            } else {
                None
            };
            Ok(StrategyRow {
                form: *form,
                mean_loss: sum::mean(&item_losses),
                std_error: standard_error(&item_losses),
                item_losses,
                metrics,
            })
        })
        .collect()
}
