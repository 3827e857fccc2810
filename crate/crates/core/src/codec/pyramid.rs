//! Non-decimated band-pass pyramid with quantized details.
//!
//! For levels `L`, `G_0 = x` and `G_l = blur(x, 2^(l-1))`. Channel 0 holds the
//! low-pass `G_L`; channel `l` holds `d_l = G_(l-1) - G_l` rounded to the
//! nearest multiple of `step`. Decoding sums all bands, so without
//! quantization it telescopes back to `x`. With `C` image channels, band `b`
//! of image channel `c` sits at feature channel `b * C + c`.

use super::{CodecSpec, FeatureMap};
use crate::image::{convolve_separable, gaussian_kernel, ImageTensor};
use crate::{Error, Result};

pub(super) fn quantize(d: f64, step: f64) -> f64 {
    step * (d / step).round()
}

pub(super) fn encode(spec: &CodecSpec, x: &ImageTensor) -> Result<FeatureMap> {
    let (h, w, c) = x.shape();
    let bands = spec.levels + 1;
    let mut out = vec![0.0; h * w * c * bands];
    let mut previous = x.data().to_vec();
    for level in 1..=spec.levels {
        let sigma = (1u64 << (level - 1)) as f64;
        let blurred = convolve_separable(x.data(), h, w, c, &gaussian_kernel(sigma)?);
        for (i, (&p, &b)) in previous.iter().zip(&blurred).enumerate() {
            let (pixel, ch) = (i / c, i % c);
            out[(pixel * bands + level) * c + ch] = quantize(p - b, spec.step);
        }
        previous = blurred;
    }
    for (i, &low) in previous.iter().enumerate() {
        let (pixel, ch) = (i / c, i % c);
        out[pixel * bands * c + ch] = low;
    }
    FeatureMap::new(h, w, bands * c, out)
}

pub(super) fn decode(spec: &CodecSpec, f: &FeatureMap) -> Result<(usize, usize, usize, Vec<f64>)> {
    let bands = spec.levels + 1;
    if !f.channels().is_multiple_of(bands) || !matches!(f.channels() / bands, 1 | 3) {
        return Err(Error::ShapeMismatch(format!(
            "pyramid with {} levels cannot decode {} channels",
            spec.levels,
            f.channels()
        )));
    }
    let c = f.channels() / bands;
    let data = f
        .data()
        .chunks_exact(bands * c)
        .flat_map(|px| (0..c).map(move |ch| (0..bands).map(|b| px[b * c + ch]).sum::<f64>()))
        .collect();
    Ok((f.height(), f.width(), c, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Codec;
    use crate::image::gaussian_blur;

    fn pyramid(levels: usize, step: f64) -> Codec {
        Codec::new(CodecSpec::pyramid(levels, step), None).unwrap()
    }

    #[test]
    fn constant_image_has_no_detail() {
        let codec = pyramid(3, 0.05);
        let x = ImageTensor::filled(16, 16, 1, 0.42).unwrap();
        let f = codec.encode(&x).unwrap();
        assert_eq!(f.channels(), 4);
        let low = f.get(0, 0, 0);
        for y in 0..16 {
            for xx in 0..16 {
                assert_eq!(f.get(y, xx, 0), low);
                for l in 1..4 {
                    assert_eq!(f.get(y, xx, l), 0.0);
                }
            }
        }
        let back = codec.decode(&f).unwrap();
        assert!(back.data().iter().all(|&v| (v - 0.42).abs() < 1e-6));
    }

    #[test]
    fn rgb_layout() {
        let codec = pyramid(2, 0.05);
        let x = ImageTensor::from_fn(8, 8, 3, |_, _, c| [0.1, 0.5, 0.9][c]).unwrap();
        let f = codec.encode(&x).unwrap();
        assert_eq!(f.channels(), 9);
        assert!((f.get(3, 3, 2) - 0.9).abs() < 1e-12);
        let back = codec.decode(&f).unwrap();
        assert!((back.get(2, 5, 1) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn checkerboard_loses_exactly_the_quantized_detail() {
        let (levels, step) = (2, 0.3);
        let codec = pyramid(levels, step);
        let x = ImageTensor::from_fn(12, 12, 1, |y, x, _| if (x + y) % 2 == 0 { 0.8 } else { 0.2 }).unwrap();
        let recon = codec.reconstruct(&x).unwrap();

        // independent pipeline: explicit blurs, explicit rounding to the step grid
        let g1 = gaussian_blur(&x, 1.0).unwrap();
        let g2 = gaussian_blur(&x, 2.0).unwrap();
        let snap = |d: f64| (d / step).round() * step;
        let mut total_err = 0.0;
        for i in 0..x.data().len() {
            let d1 = x.data()[i] - g1.data()[i];
            let d2 = g1.data()[i] - g2.data()[i];
            let expected = (g2.data()[i] + snap(d1) + snap(d2)).clamp(0.0, 1.0);
            assert!((recon.data()[i] - expected).abs() < 1e-12);
            total_err += (recon.data()[i] - x.data()[i]).abs();
        }
        assert!(total_err > 0.0);
    }

    #[test]
    fn fine_step_is_nearly_lossless() {
        let codec = pyramid(3, 1e-9);
        let x = ImageTensor::from_fn(10, 9, 1, |y, x, _| ((x * 7 + y * 3) % 11) as f64 / 10.0).unwrap();
        let recon = codec.reconstruct(&x).unwrap();
        for (a, b) in recon.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
