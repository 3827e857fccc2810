//! Toy-net parameter files.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 4     | magic `TTDN`                              |
//! | 2     | format version (`u16`, currently 1)       |
//! | 12    | `C`, `K`, `k` as `u32`                    |
//! | 4·n   | parameters as `f32` in storage order      |
//!
//! Storage order is encoder kernels `[K][k][k][C]`, encoder bias `[K]`,
//! decoder kernels `[C][k][k][K]`, decoder bias `[C]`. A `key=value` sidecar
//! next to the file (same stem, extension `spec.txt`) records the codec spec.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Backend, CodecSpec, ToyNetParams};
use crate::kv::KvRecord;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"TTDN";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 12;

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("spec.txt")
}

pub fn save_params(params: &ToyNetParams, spec: &CodecSpec, path: &Path) -> Result<()> {
    if spec.backend != Backend::ToyNet
        || spec.features != params.features()
        || spec.kernel != params.kernel()
    {
        return Err(Error::BackendMismatch(
            "parameter file spec must describe the same toy net".into(),
        ));
    }
    let mut bytes = Vec::with_capacity(HEADER_LEN + 4 * params.param_count());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    for dim in [params.channels(), params.features(), params.kernel()] {
        bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in params.iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;

    let mut sidecar = spec.to_kv();
    sidecar.set("channels", params.channels());
    let side = sidecar_path(path);
    fs::write(&side, sidecar.to_string()).map_err(|e| Error::io(&side, e))
}

pub fn load_params(path: &Path) -> Result<(CodecSpec, ToyNetParams)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |message: String| Error::Malformed {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(malformed("missing TTDN header".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(malformed(format!("unsupported format version {version}")));
    }
    let dim = |i: usize| {
        let o = 6 + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4-byte slice")) as usize
    };
    let (channels, features, kernel) = (dim(0), dim(1), dim(2));
    let template = ToyNetParams::init(channels, features, kernel, 0);
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * template.param_count() {
        return Err(malformed(format!(
            "expected {} parameters, file holds {} bytes",
            template.param_count(),
            body.len()
        )));
    }
    let flat: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
        .collect();
    let params = template.with_flat(&flat)?;

    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let record = KvRecord::parse(&text)?;
    let spec = CodecSpec::from_kv(&record)?;
    let side_channels: usize = record.require("channels")?;
    if spec.backend != Backend::ToyNet
        || spec.features != features
        || spec.kernel != kernel
        || side_channels != channels
    {
        return Err(malformed("sidecar spec disagrees with the parameter header".into()));
    }
    Ok((spec, params))
}
