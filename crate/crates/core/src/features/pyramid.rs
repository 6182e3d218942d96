use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hog::{compute_hog, FeatureLevel};
use super::image::Image;
use crate::error::{domain, Result};

/// In-plane rotations searched at test time: -30 to 30 degrees in 6 degree steps.
pub fn default_rotations() -> Vec<f64> {
    (-5..=5).map(|i| 6.0 * i as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PyramidConfig {
    pub cell_size: usize,
    pub levels_per_octave: usize,
    pub rotations: Vec<f64>,
    /// Start from a 2x upsampled copy of the image.
    pub upsample: bool,
    /// Smallest grid (cells) a level may have on either axis.
    pub min_cells: usize,
    /// Optional bounds on the level scale (level pixels per image pixel).
    pub min_scale: Option<f64>,
    pub max_scale: Option<f64>,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            cell_size: 8,
            levels_per_octave: 5,
            rotations: default_rotations(),
            upsample: true,
            min_cells: 5,
            min_scale: None,
            max_scale: None,
        }
    }
}

impl PyramidConfig {
    /// Level scales, largest first, for an image of the given size.
    pub fn scales(&self, width: usize, height: usize) -> Vec<f64> {
        let start = if self.upsample { 2.0 } else { 1.0 };
        let min_px = ((self.min_cells + 2) * self.cell_size) as f64;
        let mut out = Vec::new();
        let mut i = 0usize;
        loop {
            let scale = start * 2f64.powf(-(i as f64) / self.levels_per_octave as f64);
            if (width as f64 * scale).round() < min_px || (height as f64 * scale).round() < min_px {
                break;
            }
            let above_min = self.min_scale.map_or(true, |m| scale >= m - 1e-12);
            let below_max = self.max_scale.map_or(true, |m| scale <= m + 1e-12);
            if !above_min {
                break;
            }
            if below_max {
                out.push(scale);
            }
            i += 1;
        }
        out
    }
}

/// HOG grids of one image over scales and in-plane rotations.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub rotations: Vec<f64>,
    pub scales: Vec<f64>,
    /// Indexed `[rotation][scale]`.
    pub levels: Vec<Vec<FeatureLevel>>,
}

impl FeaturePyramid {
    pub fn level(&self, rotation: usize, scale: usize) -> &FeatureLevel {
        &self.levels[rotation][scale]
    }

    /// `(rotation index, scale index)` for every level.
    pub fn tracks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rotations.len()).flat_map(move |r| (0..self.scales.len()).map(move |s| (r, s)))
    }
}

/// Builds the pyramid: each rotation of the image (bilinear, reflected
/// border) is resized to every scale and converted to HOG cells.
pub fn build_pyramid(image: &Image, config: &PyramidConfig) -> Result<FeaturePyramid> {
    if config.levels_per_octave == 0 {
        return domain("levels_per_octave must be positive");
    }
    let scales = config.scales(image.width(), image.height());
    build_pyramid_with_scales(image, config.cell_size, &config.rotations, &scales)
}

/// Pyramid over explicit scales; used for the half-resolution levels of
/// the low-resolution mixture.
pub fn build_pyramid_with_scales(
    image: &Image,
    cell_size: usize,
    rotations: &[f64],
    scales: &[f64],
) -> Result<FeaturePyramid> {
    if rotations.is_empty() {
        return domain("at least one rotation is required");
    }
    let center = image.center();
    let rotated: Vec<Image> = rotations.par_iter().map(|&deg| image.rotate(deg)).collect();
    let jobs: Vec<(usize, usize)> = (0..rotations.len())
        .flat_map(|r| (0..scales.len()).map(move |s| (r, s)))
        .collect();
    let built: Vec<Result<FeatureLevel>> = jobs
        .par_iter()
        .map(|&(r, s)| {
            let resized = rotated[r].resize(scales[s])?;
            let mut level = compute_hog(&resized, cell_size)?;
            level.scale = scales[s];
            level.rotation = rotations[r];
            level.center = center;
            Ok(level)
        })
        .collect();
    let mut levels: Vec<Vec<FeatureLevel>> = vec![Vec::with_capacity(scales.len()); rotations.len()];
    for ((r, _), level) in jobs.into_iter().zip(built) {
        levels[r].push(level?);
    }
    Ok(FeaturePyramid {
        rotations: rotations.to_vec(),
        scales: scales.to_vec(),
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image() -> Image {
        let (w, h) = (96, 80);
        let data = (0..w * h)
            .map(|i| (((i % w) as f32 * 0.37).sin() * ((i / w) as f32 * 0.21).cos() + 1.0) / 2.0)
            .collect();
        Image::from_vec(w, h, 1, data).unwrap()
    }

    #[test]
    fn default_has_eleven_rotations() {
        let r = default_rotations();
        assert_eq!(r.len(), 11);
        assert_eq!(r[0], -30.0);
        assert_eq!(r[10], 30.0);
        assert!(r.windows(2).all(|w| (w[1] - w[0] - 6.0).abs() < 1e-12));
    }

    #[test]
    fn single_rotation_track() {
        let cfg = PyramidConfig {
            rotations: vec![0.0],
            ..Default::default()
        };
        let pyr = build_pyramid(&test_image(), &cfg).unwrap();
        assert_eq!(pyr.levels.len(), 1);
        assert!(!pyr.scales.is_empty());
    }

    #[test]
    fn upsampled_base_and_constant_ratio() {
        let cfg = PyramidConfig {
            rotations: vec![0.0, 12.0],
            ..Default::default()
        };
        let pyr = build_pyramid(&test_image(), &cfg).unwrap();
        assert_eq!(pyr.scales[0], 2.0);
        let ratio = pyr.scales[1] / pyr.scales[0];
        for w in pyr.scales.windows(2) {
            assert!((w[1] / w[0] - ratio).abs() < 1e-12);
        }
        for track in &pyr.levels {
            for pair in track.windows(2) {
                assert!(pair[1].width <= pair[0].width && pair[1].height <= pair[0].height);
            }
        }
        // one octave below the upsampled base is the original resolution
        assert_eq!(pyr.scales[cfg.levels_per_octave], 1.0);
    }

    #[test]
    fn grid_pixel_round_trip() {
        let cfg = PyramidConfig {
            rotations: vec![-18.0, 0.0, 30.0],
            ..Default::default()
        };
        let pyr = build_pyramid(&test_image(), &cfg).unwrap();
        for (r, s) in pyr.tracks() {
            let level = pyr.level(r, s);
            for y in 1..level.height.saturating_sub(1) {
                for x in 1..level.width.saturating_sub(1) {
                    let (px, py) = level.cell_to_image(x as f64, y as f64);
                    let (gx, gy) = level.image_to_cell(px, py);
                    assert_eq!((gx.round() as usize, gy.round() as usize), (x, y));
                }
            }
        }
    }
}
