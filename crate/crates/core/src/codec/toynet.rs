//! One-layer convolutional autoencoder with hand-written reverse mode.
//!
//! Encoder: `f = leaky(W_e * x + b_e)` with `K` output channels.
//! Decoder: `y = W_d * f + b_d` with `C` output channels, clamped only when
//! used as an image. Convolutions are "same"-sized with replicated borders.
//!
//! Kernel layout is `[out][dy][dx][in]`, flattened row-major.

use super::{Backend, Codec, CodecSpec, FeatureMap};
use crate::image::{replicate, ImageTensor};
use crate::rng::SplitMix64;
use crate::sum::NeumaierSum;
use crate::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.1;

/// Range of the uniform kernel initialization.
const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyNetParams {
    channels: usize,
    features: usize,
    kernel: usize,
    enc_w: Vec<f64>,
    enc_b: Vec<f64>,
    dec_w: Vec<f64>,
    dec_b: Vec<f64>,
}

impl ToyNetParams {
    /// Kernels uniform in `[-0.1, 0.1]` (encoder first, then decoder), biases zero.
    pub fn init(channels: usize, features: usize, kernel: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let kk = kernel * kernel;
        let enc_w = (0..features * kk * channels)
            .map(|_| rng.uniform(-INIT_RANGE, INIT_RANGE))
            .collect();
        let dec_w = (0..channels * kk * features)
            .map(|_| rng.uniform(-INIT_RANGE, INIT_RANGE))
            .collect();
        Self {
            channels,
            features,
            kernel,
            enc_w,
            enc_b: vec![0.0; features],
            dec_w,
            dec_b: vec![0.0; channels],
        }
    }

    pub fn from_parts(
        channels: usize,
        features: usize,
        kernel: usize,
        enc_w: Vec<f64>,
        enc_b: Vec<f64>,
        dec_w: Vec<f64>,
        dec_b: Vec<f64>,
    ) -> Result<Self> {
        if channels == 0 || features == 0 || kernel.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "toy-net shape C={channels} K={features} k={kernel}"
            )));
        }
        let kk = kernel * kernel;
        let expected = [features * kk * channels, features, channels * kk * features, channels];
        let got = [enc_w.len(), enc_b.len(), dec_w.len(), dec_b.len()];
        if expected != got {
            return Err(Error::ShapeMismatch(format!(
                "toy-net tensor sizes {got:?}, expected {expected:?}"
            )));
        }
        let p = Self {
            channels,
            features,
            kernel,
            enc_w,
            enc_b,
            dec_w,
            dec_b,
        };
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite toy-net parameter".into()));
        }
        Ok(p)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn encoder_kernels(&self) -> &[f64] {
        &self.enc_w
    }

    pub fn encoder_bias(&self) -> &[f64] {
        &self.enc_b
    }

    pub fn decoder_kernels(&self) -> &[f64] {
        &self.dec_w
    }

    pub fn decoder_bias(&self) -> &[f64] {
        &self.dec_b
    }

    pub fn param_count(&self) -> usize {
        self.enc_w.len() + self.enc_b.len() + self.dec_w.len() + self.dec_b.len()
    }

    /// All values in storage order: encoder kernels, encoder bias, decoder
    /// kernels, decoder bias.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.enc_w
            .iter()
            .chain(&self.enc_b)
            .chain(&self.dec_w)
            .chain(&self.dec_b)
            .copied()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().collect()
    }

    /// Same shape as `self`, values from `flat`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let (a, rest) = flat.split_at(self.enc_w.len());
        let (b, rest) = rest.split_at(self.enc_b.len());
        let (c, d) = rest.split_at(self.dec_w.len());
        Self::from_parts(
            self.channels,
            self.features,
            self.kernel,
            a.to_vec(),
            b.to_vec(),
            c.to_vec(),
            d.to_vec(),
        )
    }

    fn zeros_like(&self) -> Self {
        Self {
            enc_w: vec![0.0; self.enc_w.len()],
            enc_b: vec![0.0; self.enc_b.len()],
            dec_w: vec![0.0; self.dec_w.len()],
            dec_b: vec![0.0; self.dec_b.len()],
            ..*self
        }
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.enc_w, &mut self.enc_b, &mut self.dec_w, &mut self.dec_b]
    }

    fn axpy(&mut self, alpha: f64, other: &Self) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    fn tensors(&self) -> [&Vec<f64>; 4] {
        [&self.enc_w, &self.enc_b, &self.dec_w, &self.dec_b]
    }
}

fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

fn leaky_slope(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

struct ConvShape {
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    k: usize,
}

impl ConvShape {
    fn tap(&self, y: usize, x: usize, dy: usize, dx: usize) -> usize {
        let r = (self.k / 2) as isize;
        let yy = replicate(y as isize + dy as isize - r, self.h);
        let xx = replicate(x as isize + dx as isize - r, self.w);
        yy * self.w + xx
    }
}

fn conv_forward(s: &ConvShape, input: &[f64], weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; s.h * s.w * s.cout];
    for y in 0..s.h {
        for x in 0..s.w {
            let o_base = (y * s.w + x) * s.cout;
            out[o_base..o_base + s.cout].copy_from_slice(bias);
            for dy in 0..s.k {
                for dx in 0..s.k {
                    let src = s.tap(y, x, dy, dx) * s.cin;
                    let px = &input[src..src + s.cin];
                    for o in 0..s.cout {
                        let wb = ((o * s.k + dy) * s.k + dx) * s.cin;
                        let wk = &weights[wb..wb + s.cin];
                        out[o_base + o] += wk.iter().zip(px).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
    }
    out
}

/// Returns `(d weights, d bias, d input)` for upstream gradient `grad_out`.
fn conv_backward(
    s: &ConvShape,
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dw = vec![0.0; weights.len()];
    let mut db = vec![0.0; s.cout];
    let mut dx_in = vec![0.0; input.len()];
    for y in 0..s.h {
        for x in 0..s.w {
            let g = &grad_out[(y * s.w + x) * s.cout..][..s.cout];
            for (d, gv) in db.iter_mut().zip(g) {
                *d += gv;
            }
            for dy in 0..s.k {
                for dx in 0..s.k {
                    let src = s.tap(y, x, dy, dx) * s.cin;
                    for (o, &go) in g.iter().enumerate() {
                        if go == 0.0 {
                            continue;
                        }
                        let wb = ((o * s.k + dy) * s.k + dx) * s.cin;
                        for i in 0..s.cin {
                            dw[wb + i] += go * input[src + i];
                            dx_in[src + i] += go * weights[wb + i];
                        }
                    }
                }
            }
        }
    }
    (dw, db, dx_in)
}

struct Forward {
    pre: Vec<f64>,
    features: Vec<f64>,
}

fn encoder_shape(p: &ToyNetParams, h: usize, w: usize) -> ConvShape {
    ConvShape {
        h,
        w,
        cin: p.channels,
        cout: p.features,
        k: p.kernel,
    }
}

fn decoder_shape(p: &ToyNetParams, h: usize, w: usize) -> ConvShape {
    ConvShape {
        h,
        w,
        cin: p.features,
        cout: p.channels,
        k: p.kernel,
    }
}

fn encode_cached(p: &ToyNetParams, x: &ImageTensor) -> Forward {
    let pre = conv_forward(&encoder_shape(p, x.height(), x.width()), x.data(), &p.enc_w, &p.enc_b);
    let features = pre.iter().map(|&z| leaky(z)).collect();
    Forward { pre, features }
}

pub(super) fn encode(p: &ToyNetParams, x: &ImageTensor) -> FeatureMap {
    let fwd = encode_cached(p, x);
    FeatureMap::new(x.height(), x.width(), p.features, fwd.features)
        .expect("encoder output shape is consistent")
}

pub(super) fn decode_linear(p: &ToyNetParams, f: &FeatureMap) -> Vec<f64> {
    conv_forward(&decoder_shape(p, f.height(), f.width()), f.data(), &p.dec_w, &p.dec_b)
}

/// Backpropagates `grad_features` through the encoder into `grads`.
fn encoder_backward(
    p: &ToyNetParams,
    x: &ImageTensor,
    fwd: &Forward,
    grad_features: &[f64],
    grads: &mut ToyNetParams,
) {
    let grad_pre: Vec<f64> = grad_features
        .iter()
        .zip(&fwd.pre)
        .map(|(g, &z)| g * leaky_slope(z))
        .collect();
    let (dw, db, _) = conv_backward(&encoder_shape(p, x.height(), x.width()), x.data(), &p.enc_w, &grad_pre);
    add_into(&mut grads.enc_w, &dw);
    add_into(&mut grads.enc_b, &db);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Gradients of the squared reconstruction error `sum (decode(encode(x)) - x)^2`
/// (unclamped decoder output) for one source.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionGradients {
    pub loss: f64,
    /// Same shape as the network parameters.
    pub params: ToyNetParams,
    /// Gradient with respect to the encoder output `E(x)`.
    pub features: FeatureMap,
}

pub fn loss_gradients(codec: &Codec, x: &ImageTensor) -> Result<ReconstructionGradients> {
    if codec.spec().backend != Backend::ToyNet {
        return Err(Error::BackendMismatch(format!(
            "gradients need the toy-net backend, got {}",
            codec.spec().backend
        )));
    }
    let p = codec.params().expect("toy-net codec carries parameters");
    if x.channels() != p.channels {
        return Err(Error::ShapeMismatch(format!(
            "toy-net expects {} channels, got {}",
            p.channels,
            x.channels()
        )));
    }
    let (h, w) = (x.height(), x.width());
    let fwd = encode_cached(p, x);
    let out = conv_forward(&decoder_shape(p, h, w), &fwd.features, &p.dec_w, &p.dec_b);
    let mut loss = NeumaierSum::new();
    let grad_out: Vec<f64> = out
        .iter()
        .zip(x.data())
        .map(|(&y, &t)| {
            let r = y - t;
            loss.add(r * r);
            2.0 * r
        })
        .collect();
    let mut grads = p.zeros_like();
    let (dw, db, grad_features) = conv_backward(&decoder_shape(p, h, w), &fwd.features, &p.dec_w, &grad_out);
    grads.dec_w = dw;
    grads.dec_b = db;
    encoder_backward(p, x, &fwd, &grad_features, &mut grads);
    Ok(ReconstructionGradients {
        loss: loss.total(),
        params: grads,
        features: FeatureMap::new(h, w, p.features, grad_features)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 5,
            batch_size: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be in (0, 1), got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("epochs and batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub params: ToyNetParams,
    /// Mean fusion objective over the dataset before the first update.
    pub initial_loss: f64,
    /// Objective of the returned parameters.
    pub final_loss: f64,
    /// Objective after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Fusion objective for one tuple with uniform weights:
/// `sum_m mean((D(mean_m E(x_m)) - x_m)^2)`, with gradients if requested.
fn fusion_objective(p: &ToyNetParams, tuple: &[ImageTensor], grads: Option<&mut ToyNetParams>) -> f64 {
    let (h, w) = (tuple[0].height(), tuple[0].width());
    let m = tuple.len() as f64;
    let forwards: Vec<Forward> = tuple.iter().map(|x| encode_cached(p, x)).collect();
    let mut fused = vec![0.0; h * w * p.features];
    for fwd in &forwards {
        for (acc, v) in fused.iter_mut().zip(&fwd.features) {
            *acc += v / m;
        }
    }
    let out = conv_forward(&decoder_shape(p, h, w), &fused, &p.dec_w, &p.dec_b);
    let n = out.len() as f64;
    let mut loss = NeumaierSum::new();
    let mut grad_out = vec![0.0; out.len()];
    for x in tuple {
        for ((g, &y), &t) in grad_out.iter_mut().zip(&out).zip(x.data()) {
            let r = y - t;
            loss.add(r * r / n);
            *g += 2.0 * r / n;
        }
    }
    if let Some(grads) = grads {
        let (dw, db, grad_fused) = conv_backward(&decoder_shape(p, h, w), &fused, &p.dec_w, &grad_out);
        add_into(&mut grads.dec_w, &dw);
        add_into(&mut grads.dec_b, &db);
        let grad_features: Vec<f64> = grad_fused.iter().map(|g| g / m).collect();
        for (x, fwd) in tuple.iter().zip(&forwards) {
            encoder_backward(p, x, fwd, &grad_features, grads);
        }
    }
    loss.total()
}

fn dataset_objective(p: &ToyNetParams, dataset: &[Vec<ImageTensor>]) -> f64 {
    let mut acc = NeumaierSum::new();
    for tuple in dataset {
        acc.add(fusion_objective(p, tuple, None));
    }
    acc.total() / dataset.len() as f64
}

fn check_dataset(dataset: &[Vec<ImageTensor>]) -> Result<(usize, usize)> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::Empty("training dataset has no tuples".into()))?;
    let sources = first.len();
    if sources == 0 {
        return Err(Error::Empty("training tuple has no sources".into()));
    }
    let channels = first[0].channels();
    for (i, tuple) in dataset.iter().enumerate() {
        if tuple.len() != sources {
            return Err(Error::ShapeMismatch(format!(
                "tuple {i} has {} sources, expected {sources}",
                tuple.len()
            )));
        }
        if tuple.iter().any(|x| !x.same_shape(&tuple[0]) || x.channels() != channels) {
            return Err(Error::ShapeMismatch(format!("tuple {i} mixes image shapes")));
        }
    }
    Ok((sources, channels))
}

/// Mini-batch SGD on the uniform-weight fusion objective.
///
/// Tuples are visited in a seeded shuffled order each epoch. The returned
/// parameters are the best seen (including the initialization), so
/// `final_loss <= initial_loss` always holds.
pub fn train_toy(spec: &CodecSpec, dataset: &[Vec<ImageTensor>], cfg: &TrainConfig) -> Result<TrainReport> {
    if spec.backend != Backend::ToyNet {
        return Err(Error::BackendMismatch(format!(
            "training needs the toy-net backend, got {}",
            spec.backend
        )));
    }
    spec.validate()?;
    cfg.validate()?;
    let (_, channels) = check_dataset(dataset)?;

    let mut params = ToyNetParams::init(channels, spec.features, spec.kernel, cfg.seed);
    let initial_loss = dataset_objective(&params, dataset);
    if !initial_loss.is_finite() {
        return Err(Error::Diverged { epoch: 0 });
    }
    let mut best = (initial_loss, params.clone());
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 0..cfg.epochs {
        SplitMix64::derive(cfg.seed, epoch as u64).shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = params.zeros_like();
            for &i in batch {
                fusion_objective(&params, &dataset[i], Some(&mut grads));
            }
            params.axpy(-cfg.learning_rate / batch.len() as f64, &grads);
        }
        let loss = dataset_objective(&params, dataset);
        if !loss.is_finite() || params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch: epoch + 1 });
        }
        epoch_losses.push(loss);
        if loss <= best.0 {
            best = (loss, params.clone());
        }
    }
    Ok(TrainReport {
        params: best.1,
        initial_loss,
        final_loss: best.0,
        epoch_losses,
    })
}
