//! Encoder/decoder backends.
//!
//! Every backend is resolution preserving: features have the source's H×W and
//! a backend-specific channel count.
//!
//! * [`Backend::Constant`] is the identity (image-level "early" fusion).
//! * [`Backend::Pyramid`] is a non-decimated band-pass pyramid with quantized
//!   detail bands; the quantization makes reconstruction lossy without any
//!   training.
//! * [`Backend::ToyNet`] is a one-layer convolutional encoder with leaky
//!   rectification and a one-layer convolutional decoder.

mod params_io;
mod pyramid;
mod toynet;

use std::fmt;
use std::str::FromStr;

pub use params_io::{load_params, save_params, sidecar_path};
pub use toynet::{
    loss_gradients, train_toy, ReconstructionGradients, ToyNetParams, TrainConfig, TrainReport,
    LEAKY_SLOPE,
};

use crate::image::ImageTensor;
use crate::kv::KvRecord;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backend {
    Constant,
    Pyramid,
    ToyNet,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Constant => "constant",
            Backend::Pyramid => "pyramid",
            Backend::ToyNet => "toynet",
        })
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Backend::Constant),
            "pyramid" => Ok(Backend::Pyramid),
            "toynet" | "toy-net" => Ok(Backend::ToyNet),
            other => Err(Error::InvalidParameter(format!("unknown codec backend {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecSpec {
    pub backend: Backend,
    /// Pyramid depth; the low-pass band uses sigma `2^(levels-1)`.
    pub levels: usize,
    /// Detail quantization step of the pyramid.
    pub step: f64,
    /// Toy-net feature channels.
    pub features: usize,
    /// Toy-net kernel size (odd).
    pub kernel: usize,
}

impl Default for CodecSpec {
    fn default() -> Self {
        Self {
            backend: Backend::Pyramid,
            levels: 3,
            step: 0.05,
            features: 4,
            kernel: 3,
        }
    }
}

impl CodecSpec {
    pub fn constant() -> Self {
        Self {
            backend: Backend::Constant,
            ..Self::default()
        }
    }

    pub fn pyramid(levels: usize, step: f64) -> Self {
        Self {
            backend: Backend::Pyramid,
            levels,
            step,
            ..Self::default()
        }
    }

    pub fn toy_net(features: usize, kernel: usize) -> Self {
        Self {
            backend: Backend::ToyNet,
            features,
            kernel,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::InvalidParameter("pyramid levels must be >= 1".into()));
        }
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "quantization step must be in (0, 1], got {}",
                self.step
            )));
        }
        if self.features == 0 {
            return Err(Error::InvalidParameter("toy-net needs at least one feature channel".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "kernel size must be odd, got {}",
                self.kernel
            )));
        }
        Ok(())
    }

    /// Feature channel count for an image with `channels` channels.
    pub fn feature_channels(&self, channels: usize) -> usize {
        match self.backend {
            Backend::Constant => channels,
            Backend::Pyramid => (self.levels + 1) * channels,
            Backend::ToyNet => self.features,
        }
    }

    pub fn to_kv(&self) -> KvRecord {
        let mut rec = KvRecord::new();
        rec.set("backend", self.backend);
        rec.set("levels", self.levels);
        rec.set("step", self.step);
        rec.set("features", self.features);
        rec.set("kernel", self.kernel);
        rec
    }

    pub fn from_kv(rec: &KvRecord) -> Result<Self> {
        let spec = Self {
            backend: rec.require("backend")?,
            levels: rec.require("levels")?,
            step: rec.require("step")?,
            features: rec.require("features")?,
            kernel: rec.require("kernel")?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// H×W×K encoder output, interleaved like [`ImageTensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidDimensions(format!(
                "feature map {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{channels} feature map needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, k: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + k]
    }

    /// Channel `k` as a raw plane.
    pub fn channel_plane(&self, k: usize) -> crate::image::Plane {
        let data = self.data.iter().skip(k).step_by(self.channels).copied().collect();
        crate::image::Plane::new(self.height, self.width, data)
            .expect("feature map channels are finite by construction")
    }
}

/// A codec backend together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Codec {
    spec: CodecSpec,
    params: Option<ToyNetParams>,
}

impl Codec {
    /// `params` must be present exactly when the backend is the toy net.
    pub fn new(spec: CodecSpec, params: Option<ToyNetParams>) -> Result<Self> {
        spec.validate()?;
        match (spec.backend, &params) {
            (Backend::ToyNet, None) => {
                return Err(Error::BackendMismatch("toy-net backend needs parameters".into()))
            }
            (Backend::ToyNet, Some(p)) => {
                if p.features() != spec.features || p.kernel() != spec.kernel {
                    return Err(Error::BackendMismatch(format!(
                        "parameters are K={} k={}, spec says K={} k={}",
                        p.features(),
                        p.kernel(),
                        spec.features,
                        spec.kernel
                    )));
                }
            }
            (backend, Some(_)) => {
                return Err(Error::BackendMismatch(format!(
                    "{backend} backend takes no parameters"
                )))
            }
            _ => {}
        }
        Ok(Self { spec, params })
    }

    pub fn constant() -> Self {
        Self::new(CodecSpec::constant(), None).expect("constant codec is always valid")
    }

    pub fn spec(&self) -> &CodecSpec {
        &self.spec
    }

    pub fn params(&self) -> Option<&ToyNetParams> {
        self.params.as_ref()
    }

    fn check_image(&self, x: &ImageTensor) -> Result<()> {
        if let Some(p) = &self.params {
            if p.channels() != x.channels() {
                return Err(Error::ShapeMismatch(format!(
                    "toy-net expects {} image channels, got {}",
                    p.channels(),
                    x.channels()
                )));
            }
        }
        Ok(())
    }

    pub fn encode(&self, x: &ImageTensor) -> Result<FeatureMap> {
        self.check_image(x)?;
        match self.spec.backend {
            Backend::Constant => FeatureMap::new(x.height(), x.width(), x.channels(), x.data().to_vec()),
            Backend::Pyramid => pyramid::encode(&self.spec, x),
            Backend::ToyNet => Ok(toynet::encode(self.toy_params(), x)),
        }
    }

    /// Decodes and clamps into `[0, 1]`.
    pub fn decode(&self, f: &FeatureMap) -> Result<ImageTensor> {
        let (h, w, c, data) = self.decode_linear(f)?;
        ImageTensor::from_clamped(h, w, c, data)
    }

    /// Decoder output before clamping, as `(height, width, channels, data)`.
    pub fn decode_linear(&self, f: &FeatureMap) -> Result<(usize, usize, usize, Vec<f64>)> {
        match self.spec.backend {
            Backend::Constant => {
                if f.channels != 1 && f.channels != 3 {
                    return Err(Error::ShapeMismatch(format!(
                        "identity codec cannot decode {} channels",
                        f.channels
                    )));
                }
                Ok((f.height, f.width, f.channels, f.data.clone()))
            }
            Backend::Pyramid => pyramid::decode(&self.spec, f),
            Backend::ToyNet => {
                let p = self.toy_params();
                if f.channels != p.features() {
                    return Err(Error::ShapeMismatch(format!(
                        "toy-net decoder expects {} feature channels, got {}",
                        p.features(),
                        f.channels
                    )));
                }
                Ok((f.height, f.width, p.channels(), toynet::decode_linear(p, f)))
            }
        }
    }

    /// `decode(encode(x))`.
    pub fn reconstruct(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.decode(&self.encode(x)?)
    }

    fn toy_params(&self) -> &ToyNetParams {
        self.params.as_ref().expect("toy-net codec always carries parameters")
    }
}
