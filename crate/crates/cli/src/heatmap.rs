//! False-color rendering of weight and loss maps.
//!
//! The colormap has 256 entries interpolated linearly (integer arithmetic,
//! rounded) between five anchors at indices 0, 64, 128, 192 and 255:
//! dark blue `(0, 0, 128)`, blue `(0, 96, 255)`, green `(64, 200, 96)`,
//! yellow `(255, 220, 0)` and red `(200, 0, 0)`. Each map is normalized to
//! its own `[min, max]`; a constant map renders entirely at index 128.

use ttd_core::engine::{LossMap, WeightMap};
use ttd_core::image::{ImageTensor, Plane};

const ANCHORS: [(usize, [i64; 3]); 5] = [
    (0, [0, 0, 128]),
    (64, [0, 96, 255]),
    (128, [64, 200, 96]),
    (192, [255, 220, 0]),
    (255, [200, 0, 0]),
];

pub fn colormap() -> [[u8; 3]; 256] {
    let mut table = [[0u8; 3]; 256];
    for pair in ANCHORS.windows(2) {
        let ((i0, c0), (i1, c1)) = (pair[0], pair[1]);
        let span = (i1 - i0) as i64;
        for i in i0..=i1 {
            let t = (i - i0) as i64;
            for ch in 0..3 {
                // round-half-up of c0 + (c1 - c0) t / span
                let num = c0[ch] * span + (c1[ch] - c0[ch]) * t;
                table[i][ch] = ((2 * num + span).div_euclid(2 * span)) as u8;
            }
        }
    }
    table
}

/// Colormap index of `v` within `[min, max]`; 128 when the range is empty.
pub fn colormap_index(v: f64, min: f64, max: f64) -> u8 {
    if !(max > min) {
        return 128;
    }
    ((v - min) / (max - min) * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn render_heatmap(plane: &Plane) -> ImageTensor {
    let table = colormap();
    let (min, max) = plane.min_max();
    let idx: Vec<u8> = plane.data().iter().map(|&v| colormap_index(v, min, max)).collect();
    ImageTensor::from_fn(plane.height(), plane.width(), 3, |y, x, c| {
        table[idx[y * plane.width() + x] as usize][c] as f64 / 255.0
    })
    .expect("colormap values are in range")
}

pub fn render_weights(map: &WeightMap, source: usize) -> ImageTensor {
    render_heatmap(&map.source_plane(source))
}

pub fn render_loss(map: &LossMap) -> ImageTensor {
    render_heatmap(map.plane())
}
