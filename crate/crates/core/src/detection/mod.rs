//! Sliding-window detection over scales, rotations and mixtures.

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{build_pyramid, build_pyramid_with_scales, FeatureLevel, FeaturePyramid, Image, PyramidConfig};
use crate::geometry::BBox;
use crate::inference::{infer_with, Inference, InferenceOptions, UnaryResponses};
use crate::model::{Configuration, Mixture, Model};
use crate::NEG_INF;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    pub threshold: f64,
    /// Boxes overlapping a better one by more than this IoU are dropped.
    pub nms_overlap: f64,
    /// Landmark box padding as a fraction of its height.
    pub box_padding: f64,
    /// Minimum intersection over the given box when localizing in a box.
    pub min_box_overlap: f64,
    /// Candidates kept per (level, rotation, mixture) before NMS.
    pub max_per_track: usize,
    pub pyramid: PyramidConfig,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            threshold: -0.5,
            nms_overlap: 0.3,
            box_padding: 0.1,
            min_box_overlap: 0.7,
            max_per_track: 50,
            pyramid: PyramidConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub landmarks: Vec<[f64; 2]>,
    pub occluded: Vec<bool>,
    pub viewpoint: usize,
    /// In-plane rotation in degrees.
    pub rotation: f64,
    pub mixture: Mixture,
    pub component: usize,
    /// Scale index in the pyramid.
    pub level: usize,
}

/// Feature pyramids of one image: the full-resolution cells and, when the
/// model has a low-resolution mixture, half-scale levels with its cells.
#[derive(Clone, Debug)]
pub struct ImagePyramids {
    pub full: FeaturePyramid,
    pub low: Option<FeaturePyramid>,
}

impl ImagePyramids {
    pub fn build(model: &Model, image: &Image, config: &PyramidConfig) -> Result<Self> {
        let full = build_pyramid(image, config)?;
        let low_cell = model
            .components()
            .iter()
            .find(|c| c.mixture == Mixture::LowRes)
            .map(|c| c.cell_size);
        let low = match low_cell {
            Some(cell) => {
                let scales: Vec<f64> = full
                    .scales
                    .iter()
                    .map(|s| s * 0.5)
                    .filter(|s| {
                        let min = (config.min_cells + 2) * cell;
                        (image.width() as f64 * s).round() >= min as f64
                            && (image.height() as f64 * s).round() >= min as f64
                    })
                    .collect();
                Some(build_pyramid_with_scales(image, cell, &full.rotations, &scales)?)
            }
            None => None,
        };
        Ok(Self { full, low })
    }

    /// Pyramid scored by component `c`, if any.
    pub fn for_component(&self, model: &Model, c: usize) -> Option<&FeaturePyramid> {
        let comp = model.component(c);
        let p = match comp.mixture {
            Mixture::Full => Some(&self.full),
            Mixture::LowRes => self.low.as_ref(),
        }?;
        let cell = p.levels.first().and_then(|t| t.first()).map(|l| l.cell_size);
        (cell.is_none() || cell == Some(comp.cell_size)).then_some(p)
    }

    /// Every `(component, rotation, scale)` combination to score.
    pub fn tracks(&self, model: &Model) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for c in 0..model.components().len() {
            if let Some(p) = self.for_component(model, c) {
                out.extend(p.tracks().map(|(r, s)| (c, r, s)));
            }
        }
        out
    }
}

/// Map a configuration to the image frame.
pub fn to_detection(model: &Model, level: &FeatureLevel, config: &Configuration, score: f64, padding: f64) -> Detection {
    let comp = model.component(config.component);
    let landmarks: Vec<[f64; 2]> = config
        .landmarks
        .iter()
        .map(|n| {
            let (x, y) = level.cell_to_image(n.x as f64, n.y as f64);
            [x, y]
        })
        .collect();
    let tight = BBox::around(&landmarks).unwrap_or(BBox::new(0.0, 0.0, 0.0, 0.0));
    let root = config.parts[comp.topology.root()];
    Detection {
        score,
        bbox: tight.pad(padding * tight.height()),
        occluded: config.occlusion_flags(model),
        landmarks,
        viewpoint: comp.states.viewpoint_of(root.state),
        rotation: level.rotation,
        mixture: comp.mixture,
        component: config.component,
        level: config.level,
    }
}

/// Root locations above `threshold` that are 3x3 local maxima, best first.
/// Plateaus keep their first cell in row-major order.
fn peaks(inf: &Inference, threshold: f64) -> Vec<(f64, usize, usize)> {
    let (w, h) = (inf.width(), inf.height());
    let s = inf.root_scores();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = s[y * w + x];
            if !(v > threshold) || v == NEG_INF {
                continue;
            }
            let mut peak = true;
            'n: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let u = s[ny as usize * w + nx as usize];
                    let earlier = (ny, nx) < (y as i64, x as i64);
                    if u > v || (earlier && u == v) {
                        peak = false;
                        break 'n;
                    }
                }
            }
            if peak {
                out.push((v, x, y));
            }
        }
    }
    out.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
    out
}

fn run_track<'a>(
    model: &Model,
    pyr: &'a ImagePyramids,
    (c, r, s): (usize, usize, usize),
    unary: Option<&UnaryResponses>,
) -> Result<(Inference, &'a FeatureLevel)> {
    let p = pyr.for_component(model, c).expect("track from tracks()");
    let level = p.level(r, s);
    let mut inf = infer_with(model, c, level, unary, InferenceOptions::default())?;
    inf.set_track(s, r);
    Ok((inf, level))
}

/// Greedy non-maximum suppression; ties keep input order.
pub fn nms(mut candidates: Vec<Detection>, overlap: f64) -> Vec<Detection> {
    let mut idx: Vec<usize> = (0..candidates.len()).collect();
    idx.sort_by(|&a, &b| candidates[b].score.total_cmp(&candidates[a].score).then(a.cmp(&b)));
    let mut keep: Vec<usize> = Vec::new();
    for i in idx {
        if keep.iter().all(|&k| candidates[k].bbox.iou(&candidates[i].bbox) <= overlap) {
            keep.push(i);
        }
    }
    let mut slots: Vec<Option<Detection>> = candidates.drain(..).map(Some).collect();
    keep.into_iter().map(|i| slots[i].take().expect("kept once")).collect()
}

/// Detections from precomputed pyramids, sorted by descending score.
pub fn detect_in(model: &Model, pyr: &ImagePyramids, config: &DetectionConfig) -> Result<Vec<Detection>> {
    let tracks = pyr.tracks(model);
    let per_track: Vec<Result<Vec<Detection>>> = tracks
        .par_iter()
        .map(|&t| {
            let (inf, level) = run_track(model, pyr, t, None)?;
            let mut out = Vec::new();
            for (score, x, y) in peaks(&inf, config.threshold).into_iter().take(config.max_per_track) {
                if let Some(cfg) = inf.backtrack(model, x, y) {
                    out.push(to_detection(model, level, &cfg, score, config.box_padding));
                }
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for r in per_track {
        all.extend(r?);
    }
    Ok(nms(all, config.nms_overlap))
}

pub fn detect(model: &Model, image: &Image, config: &DetectionConfig) -> Result<Vec<Detection>> {
    let pyr = ImagePyramids::build(model, image, &config.pyramid)?;
    detect_in(model, &pyr, config)
}

/// Intersection over the area of `given`.
pub fn box_overlap(given: &BBox, other: &BBox) -> f64 {
    let a = given.area();
    if a <= 0.0 {
        0.0
    } else {
        given.intersection(other) / a
    }
}

/// Best detection of one track whose box covers at least
/// `min_box_overlap` of `given`. Candidates are visited by descending root
/// score, only where the root falls near the box.
pub fn localize_track(
    model: &Model,
    pyr: &ImagePyramids,
    track: (usize, usize, usize),
    unary: Option<&UnaryResponses>,
    given: &BBox,
    config: &DetectionConfig,
) -> Result<Option<Detection>> {
    let (inf, level) = run_track(model, pyr, track, unary)?;
    let near = given.pad(0.5 * given.width().max(given.height()));
    let (w, h) = (inf.width(), inf.height());
    let scores = inf.root_scores();
    let mut cands: Vec<(f64, usize)> = (0..w * h)
        .filter(|&i| scores[i] > NEG_INF)
        .filter(|&i| {
            let (px, py) = level.cell_to_image((i % w) as f64, (i / w) as f64);
            near.contains([px, py])
        })
        .map(|i| (scores[i], i))
        .collect();
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (score, i) in cands.into_iter().take(config.max_per_track.max(1) * 4) {
        let Some(cfg) = inf.backtrack(model, i % w, i / w) else { continue };
        let det = to_detection(model, level, &cfg, score, config.box_padding);
        if box_overlap(given, &det.bbox) >= config.min_box_overlap {
            return Ok(Some(det));
        }
    }
    Ok(None)
}

/// Highest-scoring detection overlapping `given` by at least the configured
/// fraction of its area.
pub fn localize_in(model: &Model, pyr: &ImagePyramids, given: &BBox, config: &DetectionConfig) -> Result<Detection> {
    let tracks = pyr.tracks(model);
    let found: Vec<Result<Option<Detection>>> = tracks
        .par_iter()
        .map(|&t| localize_track(model, pyr, t, None, given, config))
        .collect();
    let mut best: Option<Detection> = None;
    for d in found {
        if let Some(d) = d? {
            if best.as_ref().map_or(true, |b| d.score > b.score) {
                best = Some(d);
            }
        }
    }
    best.ok_or(Error::NotFound)
}

pub fn localize_in_box(model: &Model, image: &Image, given: &BBox, config: &DetectionConfig) -> Result<Detection> {
    let pyr = ImagePyramids::build(model, image, &config.pyramid)?;
    localize_in(model, &pyr, given, config)
}

pub fn write_jsonl(mut out: impl Write, detections: &[Detection]) -> Result<()> {
    for d in detections {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let f = std::io::BufReader::new(std::fs::File::open(path.as_ref())?);
    let mut out = Vec::new();
    for (n, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("{} line {}: {e}", path.as_ref().display(), n + 1)))?,
        );
    }
    Ok(out)
}
