//! Structured SVM training with hard-negative mining.

mod solver;

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use solver::{
    delta_occlusion, feature_dot, negative_margin, solve, svm_objective, NegativeCache, NegativeConstraint,
    NegativeWindow, Solution, SolverOptions,
};

use crate::detection::ImagePyramids;
use crate::error::{Error, Result};
use crate::features::{compute_hog, FeatureLevel, FeaturePyramid, Image, PyramidConfig};
use crate::geometry::Similarity;
use crate::inference::{infer_with, InferenceOptions};
use crate::model::{assemble_feature_vector, assemble_with_patches, tie_mirror_parameters, Configuration, FeatureVector, Model};
use crate::supervision::Supervision;
use crate::NEG_INF;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// Regularization trade-off.
    pub c: f64,
    /// Occlusion margin weight `m` in `[0, 1)`.
    pub margin: f64,
    pub rounds: usize,
    /// Relative duality gap at which a solve stops.
    pub tolerance: f64,
    pub max_epochs: usize,
    /// New constraints per negative image per round.
    pub negatives_per_image: usize,
    /// Squared spring weights are kept at or below `-spring_bound`, as a
    /// constraint of the solver.
    pub spring_bound: f64,
    pub mirror_tying: bool,
    pub pyramid: PyramidConfig,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            c: 0.002,
            margin: 0.5,
            rounds: 8,
            tolerance: 1e-3,
            max_epochs: 2000,
            negatives_per_image: 10,
            spring_bound: 0.01,
            mirror_tying: true,
            pyramid: PyramidConfig::default(),
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::Config(format!("C must be positive, got {}", self.c)));
        }
        if !(0.0..1.0).contains(&self.margin) {
            return Err(Error::Config(format!("m must lie in [0, 1), got {}", self.margin)));
        }
        if !(self.spring_bound >= 0.0) || !(self.tolerance > 0.0) {
            return Err(Error::Config("spring bound must be >= 0 and tolerance > 0".into()));
        }
        Ok(())
    }
}

/// Negative window: one image at one pyramid level of one mixture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WindowKey {
    pub image: usize,
    pub component: usize,
    pub rotation: usize,
    pub level: usize,
}

/// A violated negative found by mining.
#[derive(Clone, Debug)]
pub struct MinedNegative {
    pub key: WindowKey,
    pub config: Configuration,
    pub features: FeatureVector,
    pub delta: f64,
    /// Loss-augmented score `w . psi - m * delta`.
    pub score: f64,
}

/// Loss-augmented search of one negative image. Returns at most `cap`
/// configurations whose augmented score exceeds `-1 + slack(window)`,
/// most violated first.
pub fn mine_hard_negatives(
    model: &Model,
    image: usize,
    pyramids: &ImagePyramids,
    m: f64,
    cap: usize,
    slack: impl Fn(&WindowKey) -> f64 + Sync,
) -> Result<Vec<MinedNegative>> {
    let tracks = pyramids.tracks(model);
    let found: Vec<Result<Vec<MinedNegative>>> = tracks
        .par_iter()
        .map(|&(c, r, s)| {
            let level = pyramids.for_component(model, c).expect("listed track").level(r, s);
            let key = WindowKey {
                image,
                component: c,
                rotation: r,
                level: s,
            };
            let bar = -1.0 + slack(&key);
            let opts = InferenceOptions {
                loss_margin: m,
                ..Default::default()
            };
            let mut inf = infer_with(model, c, level, None, opts)?;
            inf.set_track(s, r);
            let w = inf.width();
            let scores = inf.root_scores();
            let mut cands: Vec<(f64, usize)> =
                (0..scores.len()).filter(|&i| scores[i] > bar).map(|i| (scores[i], i)).collect();
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut out = Vec::new();
            let mut taken: Vec<(i64, i64)> = Vec::new();
            for (score, i) in cands {
                if out.len() == cap {
                    break;
                }
                let (x, y) = ((i % w) as i64, (i / w) as i64);
                // spread picks out: skip roots adjacent to an earlier pick
                if taken.iter().any(|&(tx, ty)| (tx - x).abs() <= 1 && (ty - y).abs() <= 1) {
                    continue;
                }
                let Some(cfg) = inf.backtrack(model, x as usize, y as usize) else { continue };
                taken.push((x, y));
                let features = assemble_feature_vector(model, level, &cfg)?;
                let delta = delta_occlusion(&cfg.occlusion_flags(model));
                out.push(MinedNegative {
                    key,
                    config: cfg,
                    features,
                    delta,
                    score,
                });
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for f in found {
        all.extend(f?);
    }
    all.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.key.cmp(&b.key)));
    all.truncate(cap);
    Ok(all)
}

/// HOG cells of an example warped into the canonical canvas for one
/// component.
fn canvas_level(image: &Image, sup: &Supervision, transform: &Similarity, c: usize) -> Result<FeatureLevel> {
    let design = &sup.components[c];
    let inv = transform.inverse();
    let canvas = image.warp(sup.canvas[0], sup.canvas[1], |x, y| {
        let p = inv.apply([x, y]);
        (p[0], p[1])
    })?;
    let canvas = if design.feature_scale == 1.0 { canvas } else { canvas.resize(design.feature_scale)? };
    compute_hog(&canvas, design.cell_size)
}

/// Feature vectors of every supervised positive for every component, in
/// example-major order. Landmark patches are shared between the virtual
/// copies of one image.
pub fn positive_features(sup: &Supervision, model: &Model) -> Result<Vec<FeatureVector>> {
    let sources: Vec<usize> = {
        let mut s: Vec<usize> = sup.examples.iter().map(|e| e.source).collect();
        s.dedup();
        s
    };
    let first = |src: usize| sup.examples.iter().find(|e| e.source == src).expect("source listed");
    type Patches = Vec<Vec<Arc<[f32]>>>;
    let patches: Vec<Result<(usize, Patches)>> = sources
        .par_iter()
        .map(|&src| {
            let ex = first(src);
            let image = Image::load(&ex.image)?;
            let mut per_comp = Vec::new();
            for c in 0..sup.components.len() {
                let level = canvas_level(&image, sup, &ex.transform, c)?;
                let comp = model.component(c);
                let design = &sup.components[c];
                per_comp.push(
                    ex.labels[c]
                        .points
                        .iter()
                        .map(|&p| {
                            let (x, y) = design.cell_of(p);
                            Arc::from(level.extract_patch(x, y, comp.template_h, comp.template_w))
                        })
                        .collect(),
                );
            }
            Ok((src, per_comp))
        })
        .collect();
    let mut table: std::collections::HashMap<usize, Patches> = Default::default();
    for p in patches {
        let (src, v) = p?;
        table.insert(src, v);
    }
    let mut out = Vec::new();
    for ex in &sup.examples {
        for c in 0..sup.components.len() {
            let cfg = sup.positive_configuration(ex, c);
            let p = &table[&ex.source][c];
            out.push(assemble_with_patches(model, &cfg, |k| Ok(p[k].clone()))?);
        }
    }
    Ok(out)
}

/// Per-round training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub positives: usize,
    pub negatives: usize,
    pub new_constraints: usize,
    pub pruned: usize,
    pub epochs: usize,
    pub objective: f64,
    pub dual: f64,
}

impl RoundLog {
    pub const CSV_HEADER: &'static str = "round,positives,negatives,new_constraints,pruned,epochs,objective,dual";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.round, self.positives, self.negatives, self.new_constraints, self.pruned, self.epochs, self.objective, self.dual
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: Model,
    pub log: Vec<RoundLog>,
}

/// Clamp squared spring weights to `<= -bound`.
pub fn project_springs(model: &mut Model, bound: f64) {
    for i in model.quadratic_spring_indices() {
        let v = &mut model.params_mut()[i];
        if *v > -bound {
            *v = -bound;
        }
    }
}

fn install(model: &mut Model, w: &[f64], masked: &[usize], config: &TrainingConfig) -> Result<()> {
    let mut params = w.to_vec();
    for &i in masked {
        params[i] = NEG_INF;
    }
    model.set_params(params)?;
    let mirrored = model
        .components()
        .iter()
        .all(|c| c.topology.landmark_mirror().is_some());
    if config.mirror_tying && mirrored {
        *model = tie_mirror_parameters(model)?;
    }
    project_springs(model, config.spring_bound);
    Ok(())
}

/// Load negative images and build their pyramids.
pub fn negative_pyramids(model: &Model, negatives: &[PathBuf], pyramid: &PyramidConfig) -> Result<Vec<ImagePyramids>> {
    negatives
        .par_iter()
        .map(|p| {
            let img = Image::load(p)?;
            ImagePyramids::build(model, &img, pyramid)
        })
        .collect()
}

/// Full pipeline from supervision labels: zero initialization, then
/// alternating mining and solving until no new violations appear or the
/// round cap is hit. `on_round` sees every round's log and model.
pub fn train(
    sup: &Supervision,
    negatives: &[PathBuf],
    config: &TrainingConfig,
    mut on_round: impl FnMut(&RoundLog, &Model) -> Result<()>,
) -> Result<TrainOutput> {
    config.validate()?;
    let model = Model::new(sup.model_components()?)?;
    let masked: Vec<usize> = (0..model.num_params())
        .filter(|&i| model.params()[i] == NEG_INF)
        .collect();
    let positives = positive_features(sup, &model)?;
    let pyramids = negative_pyramids(&model, negatives, &config.pyramid)?;
    train_on(model, &masked, &positives, &pyramids, config, &mut on_round)
}

fn train_on(
    mut model: Model,
    masked: &[usize],
    positives: &[FeatureVector],
    pyramids: &[ImagePyramids],
    config: &TrainingConfig,
    on_round: &mut impl FnMut(&RoundLog, &Model) -> Result<()>,
) -> Result<TrainOutput> {
    let dim = model.num_params();
    let spring_bounds: Vec<(usize, f64)> = model
        .quadratic_spring_indices()
        .into_iter()
        .map(|i| (i, -config.spring_bound))
        .collect();
    let mut pos_alpha = vec![0.0; positives.len()];
    let mut cache: NegativeCache<WindowKey> = NegativeCache::new(config.margin);
    let mut seen: HashSet<(WindowKey, Configuration)> = HashSet::new();
    let mut w = vec![0.0; dim];
    install(&mut model, &w, masked, config)?;
    let mut log = Vec::new();
    for round in 0..config.rounds {
        let mined: Vec<Result<Vec<MinedNegative>>> = pyramids
            .iter()
            .enumerate()
            .map(|(i, p)| {
                mine_hard_negatives(&model, i, p, config.margin, config.negatives_per_image, |k| {
                    cache.slack(k, model.params())
                })
            })
            .collect();
        let mut added = 0;
        for batch in mined {
            for n in batch? {
                if seen.insert((n.key, n.config.clone())) {
                    cache.push(n.key, n.features, n.delta);
                    added += 1;
                }
            }
        }
        if round > 0 && added == 0 {
            break;
        }
        let opts = SolverOptions {
            c: config.c,
            tolerance: config.tolerance,
            max_epochs: config.max_epochs,
            seed: config.seed.wrapping_add(round as u64),
            upper_bounds: spring_bounds.clone(),
        };
        let sol = solve(positives, &mut pos_alpha, &mut cache, dim, &opts)?;
        w = sol.w;
        install(&mut model, &w, masked, config)?;
        let pruned = cache.prune(&w);
        let entry = RoundLog {
            round,
            positives: positives.len(),
            negatives: cache.len(),
            new_constraints: added,
            pruned,
            epochs: sol.epochs,
            objective: sol.objective,
            dual: sol.dual,
        };
        on_round(&entry, &model)?;
        log.push(entry);
    }
    Ok(TrainOutput { model, log })
}

/// Train from already computed positives and negative pyramids; `model`
/// supplies the structure and is reset to zero weights.
pub fn train_prepared(
    model: &Model,
    positives: &[FeatureVector],
    negatives: &[ImagePyramids],
    config: &TrainingConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    let fresh = Model::new(model.components().to_vec())?;
    let masked: Vec<usize> = (0..fresh.num_params())
        .filter(|&i| fresh.params()[i] == NEG_INF)
        .collect();
    train_on(fresh, &masked, positives, negatives, config, &mut |_, _| Ok(()))
}

/// Pyramid levels of a single image at one rotation and scale; handy for
/// mining tests on small grids.
pub fn single_level_pyramids(level: crate::features::FeatureLevel) -> ImagePyramids {
    ImagePyramids {
        full: FeaturePyramid {
            rotations: vec![level.rotation],
            scales: vec![level.scale],
            levels: vec![vec![level]],
        },
        low: None,
    }
}

/// Ensure the negatives directory exists and list its images.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::Data(format!("{} is not a directory", dir.display())));
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm" | "ppm" | "pnm"))
        })
        .collect();
    out.sort();
    Ok(out)
}
