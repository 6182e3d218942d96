//! Planted synthetic faces for end-to-end checks.
//!
//! Faces are drawn from a known layout on the cell grid: each landmark is
//! an oriented edge patch centered on a cell, parts shift by whole cells
//! and single landmarks jitter by one cell. Viewpoints are the generic face
//! at opposite yaw angles, so one is the mirror image of the other.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::features::{Image, PyramidConfig};
use crate::geometry::BBox;
use crate::model::{face68_mirror, Topology};
use crate::supervision::{in_quadrant, interpupillary_distance, AnnotatedFace, DatasetManifest, ReferenceShapeSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantedConfig {
    /// Yaw (degrees) of each viewpoint.
    pub yaws: Vec<f64>,
    /// Interpupillary distance of the widest viewpoint in pixels.
    pub ipd: f64,
    pub cell_size: usize,
    pub image_size: [usize; 2],
    /// Fraction of faces with a quadrant occluder.
    pub occluded_fraction: f64,
    /// Distractor patches per image.
    pub clutter: usize,
    pub noise: f32,
    pub contrast: f32,
    /// Probability that a landmark moves by one cell.
    pub landmark_jitter: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            yaws: vec![-25.0, 25.0],
            ipd: 64.0,
            cell_size: 8,
            image_size: [224, 224],
            occluded_fraction: 0.4,
            clutter: 12,
            noise: 0.1,
            contrast: 0.35,
            landmark_jitter: 0.15,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedFace {
    pub landmarks: Vec<[f64; 2]>,
    pub occluded: Vec<bool>,
    pub viewpoint: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Clone, Debug)]
pub struct PlantedImage {
    pub image: Image,
    pub faces: Vec<PlantedFace>,
}

/// Locations of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedDataset {
    pub train: PathBuf,
    pub test: PathBuf,
    pub negatives: PathBuf,
    pub references: PathBuf,
    /// Run configuration matching the generated data.
    pub config: PathBuf,
}

pub struct PlantedGenerator {
    config: PlantedConfig,
    topology: Topology,
    /// Cell layout per viewpoint, landmarks on distinct cells.
    layouts: Vec<Vec<(i64, i64)>>,
    /// Gradient direction of each landmark's patch.
    orientations: Vec<f64>,
}

/// [1, 2, 1] / 4 filter along each row, edges clamped.
fn smooth_rows(data: &[f32], w: usize, h: usize) -> Vec<f32> {
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        for x in 0..w {
            let l = row[x.saturating_sub(1)];
            let r = row[(x + 1).min(w - 1)];
            out[y * w + x] = 0.25 * l + 0.5 * row[x] + 0.25 * r;
        }
    }
    out
}

fn transpose(data: &[f32], w: usize, h: usize) -> Vec<f32> {
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            out[x * h + y] = data[y * w + x];
        }
    }
    out
}

const MAX_LAYOUT_TRIES: usize = 100;

/// Moves landmarks that share a cell to the nearest free cell, in index
/// order, so every landmark renders its own patch.
fn spread_cells(cells: &[(i64, i64)]) -> Vec<(i64, i64)> {
    let mut taken = HashSet::new();
    let mut out = Vec::with_capacity(cells.len());
    for &(x, y) in cells {
        let mut best = (x, y);
        'search: for r in 0i64.. {
            let mut ring: Vec<(i64, i64)> = Vec::new();
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx.abs().max(dy.abs()) == r {
                        ring.push((dx, dy));
                    }
                }
            }
            ring.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy.abs(), dy, dx));
            for (dx, dy) in ring {
                if !taken.contains(&(x + dx, y + dy)) {
                    best = (x + dx, y + dy);
                    break 'search;
                }
            }
        }
        taken.insert(best);
        out.push(best);
    }
    out
}

/// Bounding box of a landmark set padded by `padding` of its height.
pub fn face_box(points: &[[f64; 2]], padding: f64) -> BBox {
    let t = BBox::around(points).unwrap_or(BBox::new(0.0, 0.0, 0.0, 0.0));
    t.pad(padding * t.height())
}

impl PlantedGenerator {
    pub fn new(config: PlantedConfig) -> Result<Self> {
        if config.yaws.is_empty() || config.cell_size == 0 || !(config.ipd > 0.0) {
            return Err(Error::Config("planted faces need yaws, a cell size and a positive IPD".into()));
        }
        let refs = ReferenceShapeSet::turned_face(&config.yaws);
        let eyes = [(36..42).collect(), (42..48).collect()];
        let widest = refs
            .shapes
            .iter()
            .map(|s| interpupillary_distance(&s.points, &eyes))
            .fold(0.0, f64::max);
        let scale = config.ipd / widest;
        let cell = config.cell_size as f64;
        let mirror = face68_mirror();
        let mut layouts: Vec<Vec<(i64, i64)>> = Vec::with_capacity(refs.shapes.len());
        for (v, shape) in refs.shapes.iter().enumerate() {
            // mirrored yaws reuse the mirrored layout so the two views stay exact mirrors
            if let Some(u) = (0..v).find(|&u| config.yaws[u] == -config.yaws[v]) {
                let src = &layouts[u];
                let flipped = (0..src.len()).map(|k| (-src[mirror[k]].0, src[mirror[k]].1)).collect();
                layouts.push(flipped);
                continue;
            }
            let cells: Vec<(i64, i64)> = shape
                .points
                .iter()
                .map(|p| ((p[0] * scale / cell).round() as i64, (p[1] * scale / cell).round() as i64))
                .collect();
            layouts.push(spread_cells(&cells));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(u64::MAX);
        let mut orientations = vec![0.0; 68];
        for k in 0..68 {
            let m = mirror[k];
            if m == k {
                orientations[k] = if rng.gen_bool(0.5) { PI / 2.0 } else { -PI / 2.0 };
            } else if k < m {
                orientations[k] = rng.gen_range(0.0..2.0 * PI);
                orientations[m] = PI - orientations[k];
            }
        }
        Ok(Self {
            config,
            topology: Topology::face68(),
            layouts,
            orientations,
        })
    }

    pub fn config(&self) -> &PlantedConfig {
        &self.config
    }

    /// Run configuration suited to the generated data: one viewpoint per
    /// yaw, the canonical IPD equal to the planted one and upright pyramids
    /// over the scales faces are drawn at.
    pub fn run_config(&self) -> RunConfig {
        let c = &self.config;
        let pyramid = PyramidConfig {
            cell_size: c.cell_size,
            rotations: vec![0.0],
            upsample: false,
            max_scale: Some(1.0),
            min_scale: Some(0.7),
            ..PyramidConfig::default()
        };
        let mut cfg = RunConfig::default();
        cfg.supervision.viewpoints = c.yaws.len();
        cfg.supervision.canonical_ipd = c.ipd;
        cfg.supervision.cell_size = c.cell_size;
        cfg.training.pyramid = pyramid.clone();
        cfg.detection.pyramid = pyramid;
        cfg.detection.threshold = -1.5;
        cfg.with_seed(c.seed)
    }

    /// Reference shapes matching the generated viewpoints (unit IPD).
    pub fn reference_shapes(&self) -> ReferenceShapeSet {
        ReferenceShapeSet::turned_face(&self.config.yaws)
    }

    fn cell_center(&self, c: i64) -> f64 {
        let s = self.config.cell_size as f64;
        (c as f64 + 1.5) * s - 0.5
    }

    fn background(&self, rng: &mut ChaCha8Rng) -> Image {
        let [w, h] = self.config.image_size;
        let n = self.config.noise;
        let mut data: Vec<f32> = (0..w * h).map(|_| rng.gen_range(-n..=n)).collect();
        // low-pass so the texture survives resampling into the training canvas
        for _ in 0..2 {
            data = smooth_rows(&data, w, h);
            data = transpose(&smooth_rows(&transpose(&data, w, h), h, w), h, w);
        }
        let data = data.into_iter().map(|v| 0.5 + v).collect();
        Image::from_vec(w, h, 1, data).expect("valid size")
    }

    /// Oriented edge: a step across direction `theta` under a Gaussian
    /// window about one cell wide.
    fn draw_patch(&self, img: &mut Image, center: [f64; 2], theta: f64) {
        let rho = 0.6 * self.config.cell_size as f64;
        let reach = (3.0 * rho).ceil() as i64;
        let (c, s) = (theta.cos(), theta.sin());
        let (w, h) = (img.width() as i64, img.height() as i64);
        let (cx, cy) = (center[0].round() as i64, center[1].round() as i64);
        for y in (cy - reach).max(0)..(cy + reach + 1).min(h) {
            for x in (cx - reach).max(0)..(cx + reach + 1).min(w) {
                let (dx, dy) = (x as f64 - center[0], y as f64 - center[1]);
                let u = dx * c + dy * s;
                let g = (-(dx * dx + dy * dy) / (2.0 * rho * rho)).exp();
                let v = self.config.contrast as f64 * (u / (0.3 * rho)).tanh() * g;
                let old = img.get(x as usize, y as usize, 0);
                img.set(x as usize, y as usize, 0, (old + v as f32).clamp(0.0, 1.0));
            }
        }
    }

    fn draw_clutter(&self, img: &mut Image, rng: &mut ChaCha8Rng, count: usize, avoid: Option<&BBox>) {
        let [w, h] = self.config.image_size;
        let mut placed = 0;
        let mut tries = 0;
        while placed < count && tries < 50 * count.max(1) {
            tries += 1;
            let p = [rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64)];
            if avoid.is_some_and(|b| b.pad(self.config.cell_size as f64).contains(p)) {
                continue;
            }
            let theta = self.orientations[rng.gen_range(0..self.orientations.len())];
            self.draw_patch(img, p, theta);
            placed += 1;
        }
    }

    /// Landmark pixel positions of one sampled face, or `None` if it does
    /// not fit in the image.
    fn sample_layout(&self, rng: &mut ChaCha8Rng, viewpoint: usize) -> Option<Vec<[f64; 2]>> {
        let topo = &self.topology;
        let base = &self.layouts[viewpoint];
        // Resample until no two landmarks share a cell; the base layout is
        // collision-free, so it is the fallback.
        let mut rel = base.clone();
        for _ in 0..MAX_LAYOUT_TRIES {
            let mut shift = vec![0i64; topo.num_parts()];
            for (p, s) in shift.iter_mut().enumerate() {
                if topo.parent(p).is_some() {
                    *s = rng.gen_range(-1..=1);
                }
            }
            let candidate: Vec<(i64, i64)> = (0..base.len())
                .map(|k| {
                    let (mut x, mut y) = base[k];
                    y += shift[topo.part_of(k)];
                    if rng.gen_bool(self.config.landmark_jitter) {
                        let d = if rng.gen_bool(0.5) { 1 } else { -1 };
                        if rng.gen_bool(0.5) {
                            x += d;
                        } else {
                            y += d;
                        }
                    }
                    (x, y)
                })
                .collect();
            let distinct: HashSet<(i64, i64)> = candidate.iter().copied().collect();
            if distinct.len() == candidate.len() {
                rel = candidate;
                break;
            }
        }
        let (minx, maxx) = (rel.iter().map(|r| r.0).min()?, rel.iter().map(|r| r.0).max()?);
        let (miny, maxy) = (rel.iter().map(|r| r.1).min()?, rel.iter().map(|r| r.1).max()?);
        let [w, h] = self.config.image_size;
        let (gw, gh) = ((w / self.config.cell_size) as i64 - 2, (h / self.config.cell_size) as i64 - 2);
        // one free cell of border on every side
        let (lo_x, hi_x) = (1 - minx, gw - 2 - maxx);
        let (lo_y, hi_y) = (1 - miny, gh - 2 - maxy);
        if lo_x > hi_x || lo_y > hi_y {
            return None;
        }
        let (ox, oy) = (rng.gen_range(lo_x..=hi_x), rng.gen_range(lo_y..=hi_y));
        Some(rel.iter().map(|&(x, y)| [self.cell_center(ox + x), self.cell_center(oy + y)]).collect())
    }

    /// One image holding one planted face.
    pub fn face_image(&self, rng: &mut ChaCha8Rng) -> Result<PlantedImage> {
        let v = rng.gen_range(0..self.layouts.len());
        let landmarks = self
            .sample_layout(rng, v)
            .ok_or_else(|| Error::Config("image too small for the planted face".into()))?;
        let bbox = face_box(&landmarks, 0.1);
        let background = self.background(rng);
        let mut img = background.clone();
        self.draw_clutter(&mut img, rng, self.config.clutter, Some(&bbox));
        for (k, p) in landmarks.iter().enumerate() {
            self.draw_patch(&mut img, *p, self.orientations[k]);
        }
        let mut occluded = vec![false; 68];
        if rng.gen_bool(self.config.occluded_fraction) {
            let tight = BBox::around(&landmarks).expect("68 points");
            for _ in 0..100 {
                let a = rng.gen_range(tight.x0..=tight.x1);
                let b = rng.gen_range(tight.y0..=tight.y1);
                let q = rng.gen_range(0..4);
                let mask: Vec<bool> = landmarks.iter().map(|&p| in_quadrant(p, a, b, q)).collect();
                let n = mask.iter().filter(|&&m| m).count();
                if n >= 1 && n * 5 <= 68 * 3 {
                    occluded = mask;
                    let (w, h) = (img.width(), img.height());
                    for y in 0..h {
                        for x in 0..w {
                            // the occluder erases patches down to the background texture
                            if in_quadrant([x as f64, y as f64], a, b, q) {
                                img.set(x, y, 0, background.get(x, y, 0));
                            }
                        }
                    }
                    break;
                }
            }
        }
        Ok(PlantedImage {
            image: img,
            faces: vec![PlantedFace {
                landmarks,
                occluded,
                viewpoint: v,
                bbox,
            }],
        })
    }

    /// Background and distractors only.
    pub fn negative_image(&self, rng: &mut ChaCha8Rng) -> Image {
        let mut img = self.background(rng);
        self.draw_clutter(&mut img, rng, 2 * self.config.clutter, None);
        img
    }

    fn rng(&self, split: u64, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream((split << 40) | index as u64);
        rng
    }

    /// Face image `index` of a split; identical for a given seed.
    pub fn face_at(&self, split: u64, index: usize) -> Result<PlantedImage> {
        self.face_image(&mut self.rng(split, index))
    }

    pub fn negative_at(&self, index: usize) -> Image {
        self.negative_image(&mut self.rng(3, index))
    }

    /// Write `train/`, `test/` and `negatives/` PNGs plus manifests and the
    /// matching reference shapes under `dir`.
    pub fn write_dataset(&self, dir: impl AsRef<Path>, train: usize, test: usize, negatives: usize) -> Result<PlantedDataset> {
        let dir = dir.as_ref();
        for sub in ["train", "test", "negatives"] {
            std::fs::create_dir_all(dir.join(sub))?;
        }
        let mut manifests = Vec::new();
        for (split, name, count) in [(1u64, "train", train), (2, "test", test)] {
            let faces: Vec<Result<AnnotatedFace>> = (0..count)
                .into_par_iter()
                .map(|i| {
                    let p = self.face_at(split, i)?;
                    let file = format!("{name}_{i:04}.png");
                    p.image.save_png(dir.join(name).join(&file))?;
                    let f = &p.faces[0];
                    Ok(AnnotatedFace {
                        image: PathBuf::from(name).join(file),
                        landmarks: f.landmarks.clone(),
                        occluded: Some(f.occluded.clone()),
                        bbox: Some(f.bbox),
                    })
                })
                .collect();
            let manifest = DatasetManifest {
                examples: faces.into_iter().collect::<Result<_>>()?,
            };
            let path = dir.join(format!("{name}.json"));
            manifest.save(&path)?;
            manifests.push(path);
        }
        (0..negatives)
            .into_par_iter()
            .map(|i| self.negative_at(i).save_png(dir.join("negatives").join(format!("neg_{i:04}.png"))))
            .collect::<Result<Vec<()>>>()?;
        let references = dir.join("references.json");
        std::fs::write(&references, serde_json::to_string_pretty(&self.reference_shapes())? + "\n")?;
        let mut run = self.run_config();
        run.reference_shapes = Some(PathBuf::from("references.json"));
        let config = dir.join("config.json");
        std::fs::write(&config, serde_json::to_string_pretty(&run)? + "\n")?;
        Ok(PlantedDataset {
            train: manifests[0].clone(),
            test: manifests[1].clone(),
            negatives: dir.join("negatives"),
            references,
            config,
        })
    }
}
