//! Merges the optional config file with command-line flags.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use ttd_core::codec::{load_params, Backend, Codec, CodecSpec};
use ttd_core::engine::{ChannelRule, Normalization, WeightForm, WeightVariant};
use ttd_core::kv::KvRecord;

use crate::args::Common;

/// Resolved `key=value` settings: config file first, flags on top.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    kv: KvRecord,
}

impl Settings {
    pub fn resolve(common: &Common, extra: &[(&str, Option<String>)]) -> Result<Self> {
        let mut kv = match &common.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                KvRecord::parse(&text).with_context(|| format!("parsing config {}", path.display()))?
            }
            None => KvRecord::new(),
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let flags: [(&str, Option<String>); 12] = [
            ("codec", common.codec.clone()),
            ("params", path(&common.params)),
            ("form", common.form.clone()),
            ("norm", common.norm.clone()),
            ("grad-channel", common.grad_channel.map(|v| v.to_string())),
            ("out", path(&common.out)),
            ("csv", path(&common.csv)),
            ("seed", common.seed.map(|v| v.to_string())),
            ("jobs", common.jobs.map(|v| v.to_string())),
            ("force-unnormalized", common.force_unnormalized.then(|| "true".to_string())),
            ("levels", common.levels.map(|v| v.to_string())),
            ("step", common.step.map(|v| v.to_string())),
        ];
        for (key, value) in flags.into_iter().chain(extra.iter().cloned()) {
            if let Some(v) = value {
                kv.set(key, v);
            }
        }
        Ok(Self { kv })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.kv
            .get(key)
            .map(|raw| raw.parse::<T>().map_err(|e| anyhow!("invalid {key} {raw:?}: {e}")))
            .transpose()
    }

    pub fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.get(key)?.ok_or_else(|| anyhow!("missing --{key}"))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.require::<PathBuf>(key)
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        self.or(key, false)
    }

    pub fn seed(&self) -> Result<u64> {
        self.or("seed", 0)
    }

    pub fn jobs(&self) -> Result<usize> {
        let jobs = self.or("jobs", 1)?;
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        Ok(jobs)
    }

    pub fn force(&self) -> Result<bool> {
        self.flag("force-unnormalized")
    }

    pub fn weight_form(&self) -> Result<WeightForm> {
        let variant: WeightVariant = self.or("form", WeightVariant::ExpRd)?;
        let norm: Normalization = self.or("norm", Normalization::Softmax)?;
        let channel = match self.get::<usize>("grad-channel")? {
            Some(c) => ChannelRule::Fixed(c),
            None => ChannelRule::MaxVariance,
        };
        Ok(WeightForm::new(variant).with_normalization(norm).with_channel(channel))
    }

    /// The codec named by `--codec` (default pyramid); the toy net needs
    /// `--params`.
    pub fn codec(&self) -> Result<Codec> {
        let backend: Backend = self.or("codec", Backend::Pyramid)?;
        match backend {
            Backend::Constant => Ok(Codec::constant()),
            Backend::Pyramid => {
                let d = CodecSpec::default();
                let spec = CodecSpec::pyramid(self.or("levels", d.levels)?, self.or("step", d.step)?);
                Ok(Codec::new(spec, None)?)
            }
            Backend::ToyNet => {
                let path: PathBuf = self
                    .get("params")?
                    .ok_or_else(|| anyhow!("--codec toynet needs --params <file>"))?;
                load_codec(&path)
            }
        }
    }
}

pub fn load_codec(path: &Path) -> Result<Codec> {
    let (spec, params) = load_params(path).with_context(|| format!("loading parameters {}", path.display()))?;
    Ok(Codec::new(spec, Some(params))?)
}
