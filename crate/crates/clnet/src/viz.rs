//! Neural-map heatmaps: channel mean, Gaussian smoothing, min-max scaling,
//! a fixed viridis ramp and nearest-neighbour upscaling.

use std::path::Path;

use clnet_core::{Grid, Model, ViewId};
use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};

/// Smoothing kernel size for levels 1..=4.
pub const KERNEL_SIZES: [usize; 4] = [5, 4, 3, 1];

/// Viridis sampled at nine evenly spaced points.
const VIRIDIS: [[u8; 3]; 9] = [
    [68, 1, 84],
    [71, 44, 122],
    [59, 81, 139],
    [44, 113, 142],
    [33, 144, 141],
    [39, 173, 129],
    [92, 200, 99],
    [170, 220, 50],
    [253, 231, 37],
];

pub fn kernel_size(level: usize) -> Result<usize> {
    KERNEL_SIZES
        .get(level.wrapping_sub(1))
        .copied()
        .ok_or_else(|| Error::Validation(format!("level {level} is not in 1..=4")))
}

/// Normalized taps at offsets `i - (k-1)/2`; σ follows the usual
/// size-to-sigma rule `0.3·((k-1)/2 - 1) + 0.8`.
pub fn gaussian_kernel(k: usize) -> Vec<f64> {
    if k <= 1 {
        return vec![1.0];
    }
    let sigma = 0.3 * ((k as f64 - 1.0) * 0.5 - 1.0) + 0.8;
    let c = (k as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..k)
        .map(|i| {
            let x = i as f64 - c;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// `H×W` mean over channels.
pub fn channel_mean(map: &Grid<f32>) -> Vec<f64> {
    let c = map.channels();
    map.as_slice()
        .chunks_exact(c)
        .map(|px| px.iter().map(|&v| v as f64).sum::<f64>() / c as f64)
        .collect()
}

/// Separable blur with clamped borders.
pub fn blur(values: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    if k <= 1 {
        return values.to_vec();
    }
    let taps = gaussian_kernel(k);
    let lo = (k - 1) / 2;
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, t) in taps.iter().enumerate() {
                    let d = i as isize - lo as isize;
                    let (yy, xx) = if horizontal {
                        (y, (x as isize + d).clamp(0, w as isize - 1) as usize)
                    } else {
                        ((y as isize + d).clamp(0, h as isize - 1) as usize, x)
                    };
                    acc += t * src[yy * w + xx];
                }
                out[y * w + x] = acc;
            }
        }
        out
    };
    pass(&pass(values, true), false)
}

/// Maps to `[0, 1]`; a constant input maps to all zeros.
pub fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 1e-12 * hi.abs().max(lo.abs()).max(1e-30)) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / range).collect()
}

pub fn colormap(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f64;
    let i = (t.floor() as usize).min(VIRIDIS.len() - 2);
    let f = t - i as f64;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    std::array::from_fn(|c| (a[c] as f64 + f * (b[c] as f64 - a[c] as f64)).round() as u8)
}

/// Heatmap of one map, each cell drawn as a `scale×scale` block.
pub fn heatmap(map: &Grid<f32>, level: usize, scale: usize) -> Result<RgbImage> {
    if scale == 0 {
        return Err(Error::Validation("scale must be at least 1".into()));
    }
    let (h, w) = (map.height(), map.width());
    let values = min_max(&blur(&channel_mean(map), h, w, kernel_size(level)?));
    Ok(ImageBuffer::from_fn((w * scale) as u32, (h * scale) as u32, |x, y| {
        Rgb(colormap(values[(y as usize / scale) * w + x as usize / scale]))
    }))
}

/// The ground map or the satellite map the model derives from it.
pub fn view_map(model: &Model<f32>, view: ViewId, level: usize) -> Result<Grid<f32>> {
    kernel_size(level)?;
    Ok(match view {
        ViewId::Ground => model.ground_map(level)?.grid,
        ViewId::Satellite => model.satellite_map(level)?.grid,
    })
}

pub fn write_heatmap(model: &Model<f32>, view: ViewId, level: usize, scale: usize, path: &Path) -> Result<()> {
    heatmap(&view_map(model, view, level)?, level, scale)?
        .save(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_are_normalized() {
        for k in KERNEL_SIZES {
            let t = gaussian_kernel(k);
            assert_eq!(t.len(), k);
            assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn level_four_is_unsmoothed() {
        let map = Grid::from_fn(3, 4, 2, |y, x, c| (y * 4 + x + c) as f32);
        let mean = channel_mean(&map);
        assert_eq!(blur(&mean, 3, 4, kernel_size(4).unwrap()), mean);
        assert_ne!(blur(&mean, 3, 4, kernel_size(1).unwrap()), mean);
    }

    #[test]
    fn constant_map_is_one_color() {
        let map = Grid::filled(4, 4, 3, 0.25f32);
        for level in 1..=4 {
            let img = heatmap(&map, level, 2).unwrap();
            assert!(img.pixels().all(|p| p.0 == VIRIDIS[0]));
        }
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(colormap(0.0), VIRIDIS[0]);
        assert_eq!(colormap(1.0), VIRIDIS[8]);
        assert_eq!(colormap(0.5), VIRIDIS[4]);
    }

    #[test]
    fn bad_level() {
        assert!(kernel_size(0).is_err());
        assert!(kernel_size(5).is_err());
    }
}
