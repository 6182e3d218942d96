//! Supervised mixture labels from landmark annotations.
//!
//! Each face is assigned the viewpoint of its nearest reference shape and
//! mapped by a similarity into a shared canonical canvas. Part shapes are
//! clustered per viewpoint, occlusion is synthesized with quadrant
//! occluders, and the resulting part masks are clustered into a small
//! pattern library.

mod kmeans;
mod occlusion;
mod procrustes;
mod reference;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use kmeans::{kmeans, nearest, KMeans};
pub use occlusion::{
    cluster_occlusion_patterns, generate_virtual_positives, in_quadrant, is_quadrant_mask, sample_quadrant_occlusion,
    snap, PatternLibrary,
};
pub use procrustes::procrustes_align;
pub use reference::{ReferenceShape, ReferenceShapeSet};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Similarity};
use crate::model::{low_res_point_groups, Component, Configuration, Mixture, NodeState, StateSpace, Topology, TopologySpec};

/// One annotated face.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedFace {
    pub image: PathBuf,
    pub landmarks: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occluded: Option<Vec<bool>>,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
}

/// A list of annotated faces. Relative image paths are resolved against
/// the manifest's directory when loaded.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub examples: Vec<AnnotatedFace>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new(""));
        for ex in &mut m.examples {
            if ex.image.is_relative() {
                ex.image = dir.join(&ex.image);
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

fn default_eyes() -> [Vec<usize>; 2] {
    [(36..42).collect(), (42..48).collect()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupervisionConfig {
    pub viewpoints: usize,
    pub shapes: usize,
    pub occlusions: usize,
    pub virtual_positives: usize,
    /// Interpupillary distance of the widest reference face on the canvas.
    pub canonical_ipd: f64,
    pub cell_size: usize,
    pub template_size: usize,
    pub low_res: bool,
    pub low_res_cell_size: usize,
    pub low_res_template_size: usize,
    /// Landmark groups whose means are the two eye centers.
    pub eyes: [Vec<usize>; 2],
    /// Cluster mirrored viewpoint pairs together so labels are mirror images.
    pub mirror_consistent: bool,
    pub kmeans_iterations: usize,
    pub seed: u64,
}

impl Default for SupervisionConfig {
    fn default() -> Self {
        Self {
            viewpoints: 3,
            shapes: 3,
            occlusions: 4,
            virtual_positives: 8,
            canonical_ipd: 40.0,
            cell_size: 8,
            template_size: 5,
            low_res: false,
            low_res_cell_size: 4,
            low_res_template_size: 7,
            eyes: default_eyes(),
            mirror_consistent: true,
            kmeans_iterations: 100,
            seed: 0,
        }
    }
}

/// Labels of one example for one model component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleLabels {
    /// Canvas coordinates of the component's landmarks.
    pub points: Vec<[f64; 2]>,
    /// Per-part shape state (`viewpoint * S + local`).
    pub shapes: Vec<usize>,
    /// Per-part occlusion pattern.
    pub patterns: Vec<usize>,
    /// Per-landmark occlusion, equal to the bits of the part patterns.
    pub occluded: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisedExample {
    /// Index into the manifest.
    pub source: usize,
    pub image: PathBuf,
    /// 0 for the original, `1..` for synthetic occlusions.
    pub virtual_index: usize,
    pub viewpoint: usize,
    /// Image pixels to canvas pixels.
    pub transform: Similarity,
    /// One entry per component, in component order.
    pub labels: Vec<ExampleLabels>,
}

/// Structure of one model component derived from the labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentDesign {
    pub mixture: Mixture,
    pub topology: TopologySpec,
    pub states: StateSpace,
    pub cell_size: usize,
    pub template: [usize; 2],
    /// Feature-image pixels per canvas pixel.
    pub feature_scale: f64,
    pub landmark_anchors: Vec<Vec<[i64; 2]>>,
    pub part_anchors: Vec<Vec<[i64; 2]>>,
}

impl ComponentDesign {
    pub fn component(&self) -> Result<Component> {
        let topo = Topology::new(self.topology.clone())?;
        let mut c = Component::new(
            self.mixture,
            topo,
            self.states.clone(),
            self.cell_size,
            (self.template[0], self.template[1]),
        )?;
        c.landmark_anchors = self.landmark_anchors.clone();
        c.part_anchors = self.part_anchors.clone();
        c.validate()?;
        Ok(c)
    }

    /// Grid cell of a canvas point on this component's feature level.
    pub fn cell_of(&self, p: [f64; 2]) -> (i64, i64) {
        canvas_cell(p, self.cell_size, self.feature_scale)
    }
}

/// Grid cell nearest to a canvas point on a level at `scale` with
/// `cell_size` pixel cells.
pub fn canvas_cell(p: [f64; 2], cell_size: usize, scale: f64) -> (i64, i64) {
    let c = |v: f64| ((v + 0.5) * scale / cell_size as f64 - 1.5).round() as i64;
    (c(p[0]), c(p[1]))
}

/// Output of [`supervise`]; serialized as the supervision cache.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Supervision {
    pub config: SupervisionConfig,
    /// Canvas width and height in pixels.
    pub canvas: [usize; 2],
    pub components: Vec<ComponentDesign>,
    pub examples: Vec<SupervisedExample>,
}

impl Supervision {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.as_ref().display())))
    }

    /// Build the model components described by the labels.
    pub fn model_components(&self) -> Result<Vec<Component>> {
        self.components.iter().map(ComponentDesign::component).collect()
    }

    /// Supervised configuration of an example for component `c`. Hidden
    /// landmarks sit at their anchors.
    pub fn positive_configuration(&self, example: &SupervisedExample, c: usize) -> Configuration {
        let design = &self.components[c];
        let labels = &example.labels[c];
        let o = design.states.occlusions;
        let topo = Topology::new(design.topology.clone()).expect("validated topology");
        let parts: Vec<NodeState> = (0..topo.num_parts())
            .map(|p| {
                let (x, y) = design.cell_of(centroid(topo.landmarks_of(p).iter().map(|&k| labels.points[k])));
                NodeState {
                    x,
                    y,
                    state: labels.shapes[p],
                    occlusion: labels.patterns[p].min(o - 1),
                }
            })
            .collect();
        let landmarks = (0..topo.num_landmarks())
            .map(|k| {
                let part = parts[topo.part_of(k)];
                let (x, y) = if labels.occluded[k] {
                    let a = design.landmark_anchors[k][part.state];
                    (part.x + a[0], part.y + a[1])
                } else {
                    design.cell_of(labels.points[k])
                };
                NodeState { x, y, ..part }
            })
            .collect();
        Configuration {
            component: c,
            level: 0,
            rotation: 0,
            parts,
            landmarks,
        }
    }
}

fn centroid(points: impl Iterator<Item = [f64; 2]>) -> [f64; 2] {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for p in points {
        sx += p[0];
        sy += p[1];
        n += 1;
    }
    let n = n.max(1) as f64;
    [sx / n, sy / n]
}

fn group_mean(points: &[[f64; 2]], group: &[usize]) -> [f64; 2] {
    centroid(group.iter().map(|&k| points[k]))
}

/// Interpupillary distance from the two eye groups.
pub fn interpupillary_distance(points: &[[f64; 2]], eyes: &[Vec<usize>; 2]) -> f64 {
    let (a, b) = (group_mean(points, &eyes[0]), group_mean(points, &eyes[1]));
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Viewpoint of the reference with the smallest alignment residual; ties
/// go to the lowest viewpoint id. Also returns that reference's index.
pub fn assign_viewpoint(points: &[[f64; 2]], refs: &ReferenceShapeSet) -> Result<(usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for (i, r) in refs.shapes.iter().enumerate() {
        let (_, res) = procrustes_align(points, &r.points)?;
        let better = match best {
            None => true,
            Some((br, bv, _)) => res < br || (res == br && r.viewpoint < bv),
        };
        if better {
            best = Some((res, r.viewpoint, i));
        }
    }
    best.map(|(_, v, i)| (v, i))
        .ok_or_else(|| Error::Config("reference shape set is empty".into()))
}

/// Similarity taking the face onto its nearest reference, and that
/// reference's viewpoint.
pub fn normalize_example(points: &[[f64; 2]], refs: &ReferenceShapeSet) -> Result<(usize, Similarity)> {
    let (v, i) = assign_viewpoint(points, refs)?;
    let (t, _) = procrustes_align(points, &refs.shapes[i].points)?;
    Ok((v, t))
}

/// Shape clusters for one `(viewpoint, part)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeClusters {
    /// Centroid-subtracted landmark coordinates `(x0, y0, x1, y1, ...)`.
    pub centers: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
}

/// Centroid-subtracted coordinate vector of a part's landmarks.
pub fn centered_part_vector(points: &[[f64; 2]], landmarks: &[usize]) -> Vec<f64> {
    let c = centroid(landmarks.iter().map(|&k| points[k]));
    landmarks
        .iter()
        .flat_map(|&k| [points[k][0] - c[0], points[k][1] - c[1]])
        .collect()
}

/// k-means over part shape vectors with a fixed seed.
pub fn cluster_part_shapes(vectors: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<ShapeClusters> {
    let km = kmeans(vectors, k, &mut ChaCha8Rng::seed_from_u64(seed), max_iter)?;
    Ok(ShapeClusters {
        centers: km.centers,
        assignment: km.assignment,
    })
}

fn sub_seed(seed: u64, tag: u64, a: usize, b: usize) -> u64 {
    seed ^ (tag << 56) ^ ((a as u64) << 28) ^ (b as u64)
}

/// Mirror of a point set on a canvas of width `w`: `x -> w - 1 - x` with
/// landmark indices permuted.
fn mirror_points(points: &[[f64; 2]], mirror: &[usize], w: f64) -> Vec<[f64; 2]> {
    (0..points.len())
        .map(|k| {
            let p = points[mirror[k]];
            [w - 1.0 - p[0], p[1]]
        })
        .collect()
}

/// Derive all supervision labels for a manifest.
pub fn supervise(
    manifest: &DatasetManifest,
    refs: &ReferenceShapeSet,
    topology: &Topology,
    config: &SupervisionConfig,
) -> Result<Supervision> {
    if manifest.examples.is_empty() {
        return Err(Error::Data("manifest has no examples".into()));
    }
    if config.shapes == 0 || config.occlusions == 0 || config.viewpoints == 0 {
        return Err(Error::Config("S, O and V must be positive".into()));
    }
    if config.template_size % 2 == 0 || config.low_res_template_size % 2 == 0 {
        return Err(Error::Config("template sizes must be odd".into()));
    }
    let nl = topology.num_landmarks();
    let mut offenders = Vec::new();
    for (i, ex) in manifest.examples.iter().enumerate() {
        if ex.landmarks.len() != nl {
            offenders.push(format!("#{i} ({}): {} landmarks, expected {nl}", ex.image.display(), ex.landmarks.len()));
        } else if ex.landmarks.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            offenders.push(format!("#{i} ({}): non-finite landmark", ex.image.display()));
        } else if ex.occluded.as_ref().is_some_and(|o| o.len() != nl) {
            offenders.push(format!("#{i} ({}): occlusion flags do not match landmarks", ex.image.display()));
        }
    }
    if !offenders.is_empty() {
        return Err(Error::Data(format!("invalid examples: {}", offenders.join("; "))));
    }
    refs.validate(config.viewpoints, nl)?;
    let widest = refs
        .shapes
        .iter()
        .map(|s| interpupillary_distance(&s.points, &config.eyes))
        .fold(0.0, f64::max);
    if !(widest > 0.0) {
        return Err(Error::Config("reference shapes have zero interpupillary distance".into()));
    }
    let refs = refs.scaled(config.canonical_ipd / widest);

    // canvas: every reference plus a margin for templates and variation
    let all: Vec<[f64; 2]> = refs.shapes.iter().flat_map(|s| s.points.iter().copied()).collect();
    let bx = BBox::around(&all).expect("non-empty references");
    let cell = config.cell_size as f64;
    let margin = ((config.template_size / 2 + 2) as f64 * cell).max(0.3 * bx.width().max(bx.height()));
    // symmetric canvas around x = 0 so mirroring maps the grid onto itself
    let half_w = ((bx.x0.abs().max(bx.x1.abs()) + margin) / cell).ceil() * cell;
    let canvas_w = 2.0 * half_w;
    let canvas_h = ((bx.height() + 2.0 * margin) / cell).ceil() * cell;
    let offset = (half_w - 0.5, margin - bx.y0);

    let normalized: Vec<Result<(usize, Similarity)>> = manifest
        .examples
        .par_iter()
        .map(|ex| normalize_example(&ex.landmarks, &refs))
        .collect();
    let mut views = Vec::with_capacity(normalized.len());
    for (i, r) in normalized.into_iter().enumerate() {
        let (v, t) = r.map_err(|e| Error::Data(format!("example #{i}: {e}")))?;
        views.push((v, t.then_translate(offset.0, offset.1)));
    }
    let canvas_points: Vec<Vec<[f64; 2]>> = manifest
        .examples
        .iter()
        .zip(&views)
        .map(|(ex, (_, t))| ex.landmarks.iter().map(|&p| t.apply(p)).collect())
        .collect();

    // original plus synthetic masks per example
    let masks: Vec<Vec<Vec<bool>>> = (0..manifest.examples.len())
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64 + 1);
            generate_virtual_positives(
                &canvas_points[i],
                manifest.examples[i].occluded.as_deref(),
                config.virtual_positives,
                &mut rng,
            )
        })
        .collect();

    let mirror = if config.mirror_consistent { topology.landmark_mirror().map(<[usize]>::to_vec) } else { None };
    let ctx = LabelContext {
        topology,
        config,
        views: &views,
        points: &canvas_points,
        mirror: mirror.as_deref(),
        canvas_w,
    };
    let full = ctx.label_full(&masks)?;
    let mut designs = vec![full.design];
    let mut per_component = vec![full.labels];
    if config.low_res {
        let low = ctx.label_low_res(&per_component[0])?;
        designs.push(low.design);
        per_component.push(low.labels);
    }

    let mut examples = Vec::new();
    for (i, ex) in manifest.examples.iter().enumerate() {
        for j in 0..masks[i].len() {
            examples.push(SupervisedExample {
                source: i,
                image: ex.image.clone(),
                virtual_index: j,
                viewpoint: views[i].0,
                transform: views[i].1,
                labels: per_component.iter().map(|l| l[i][j].clone()).collect(),
            });
        }
    }
    Ok(Supervision {
        config: config.clone(),
        canvas: [canvas_w as usize, canvas_h as usize],
        components: designs,
        examples,
    })
}

struct Labeled {
    design: ComponentDesign,
    /// `[example][virtual]`
    labels: Vec<Vec<ExampleLabels>>,
}

struct LabelContext<'a> {
    topology: &'a Topology,
    config: &'a SupervisionConfig,
    views: &'a [(usize, Similarity)],
    points: &'a [Vec<[f64; 2]>],
    mirror: Option<&'a [usize]>,
    canvas_w: f64,
}

impl LabelContext<'_> {
    /// Viewpoint whose clustering also covers `v` (its mirror partner when
    /// clustering jointly), and whether `v` is the mirrored side.
    fn owner(&self, v: usize) -> (usize, bool) {
        let vm = self.config.viewpoints - 1 - v;
        if self.mirror.is_some() && vm < v {
            (vm, true)
        } else {
            (v, false)
        }
    }

    fn label_full(&self, masks: &[Vec<Vec<bool>>]) -> Result<Labeled> {
        let topo = self.topology;
        let cfg = self.config;
        let (nv, ns, no, np) = (cfg.viewpoints, cfg.shapes, cfg.occlusions, topo.num_parts());
        let n = self.points.len();
        let part_mirror = topo.part_mirror();
        // examples seen in owner frame: mirrored ones use mirrored points
        let owner_points: Vec<Vec<[f64; 2]>> = (0..n)
            .map(|i| {
                let (_, flipped) = self.owner(self.views[i].0);
                if flipped {
                    mirror_points(&self.points[i], self.mirror.expect("mirror set"), self.canvas_w)
                } else {
                    self.points[i].clone()
                }
            })
            .collect();
        let owner_masks: Vec<Vec<Vec<bool>>> = (0..n)
            .map(|i| {
                let (_, flipped) = self.owner(self.views[i].0);
                masks[i]
                    .iter()
                    .map(|m| {
                        if flipped {
                            let mir = self.mirror.expect("mirror set");
                            (0..m.len()).map(|k| m[mir[k]]).collect()
                        } else {
                            m.clone()
                        }
                    })
                    .collect()
            })
            .collect();

        // shapes[i][p] local shape; patterns[i][j][p]
        let mut local_shape = vec![vec![0usize; np]; n];
        let mut libraries = vec![vec![Vec::new(); nv]; np];
        let mut pattern_of = vec![vec![vec![0usize; np]; masks.first().map_or(0, Vec::len)]; n];
        let mut shape_centers = vec![vec![Vec::new(); nv]; np];
        for v in 0..nv {
            if self.owner(v).0 != v {
                continue;
            }
            let members: Vec<usize> = (0..n).filter(|&i| self.owner(self.views[i].0).0 == v).collect();
            for p in 0..np {
                let lms = topo.landmarks_of(p);
                let vectors: Vec<Vec<f64>> = members.iter().map(|&i| centered_part_vector(&owner_points[i], lms)).collect();
                if vectors.len() < ns {
                    return Err(Error::Data(format!(
                        "viewpoint {v} part '{}' has {} examples, fewer than S = {ns}; lower the number of shape mixtures",
                        topo.part_name(p),
                        vectors.len()
                    )));
                }
                let clusters = cluster_part_shapes(&vectors, ns, sub_seed(cfg.seed, 1, v, p), cfg.kmeans_iterations)?;
                for (&i, &a) in members.iter().zip(&clusters.assignment) {
                    local_shape[i][p] = a;
                }
                shape_centers[p][v] = clusters.centers;

                let mut part_masks = Vec::new();
                for &i in &members {
                    for m in &owner_masks[i] {
                        part_masks.push(lms.iter().map(|&k| m[k]).collect::<Vec<bool>>());
                    }
                }
                let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 2, v, p));
                let lib = cluster_occlusion_patterns(&part_masks, no, &mut rng)?;
                let mut at = 0;
                for &i in &members {
                    for j in 0..owner_masks[i].len() {
                        pattern_of[i][j][p] = lib.assignment[at];
                        at += 1;
                    }
                }
                libraries[p][v] = lib.patterns;
            }
        }
        // owner frame part p corresponds to part pm(p) in the mirrored view
        let to_view_part = |p: usize, flipped: bool| if flipped { part_mirror.expect("mirror")[p] } else { p };
        for v in 0..nv {
            let (ov, flipped) = self.owner(v);
            if !flipped {
                continue;
            }
            let mir = self.mirror.expect("mirror set");
            for p in 0..np {
                let pv = to_view_part(p, true);
                libraries[pv][v] = libraries[p][ov]
                    .iter()
                    .map(|pat| {
                        let mut out = vec![false; pat.len()];
                        for (slot, &k) in topo.landmarks_of(p).iter().enumerate() {
                            out[topo.slot(mir[k])] = pat[slot];
                        }
                        out
                    })
                    .collect();
            }
        }
        let states = StateSpace {
            viewpoints: nv,
            shapes: ns,
            occlusions: no,
            viewpoint_mirror: (0..nv).map(|v| nv - 1 - v).collect(),
            patterns: libraries,
        };

        let mut design = ComponentDesign {
            mixture: Mixture::Full,
            topology: topo.spec().clone(),
            states,
            cell_size: cfg.cell_size,
            template: [cfg.template_size; 2],
            feature_scale: 1.0,
            landmark_anchors: vec![vec![[0, 0]; nv * ns]; topo.num_landmarks()],
            part_anchors: vec![vec![[0, 0]; nv * ns]; np],
        };

        // labels in the example's own frame
        let labels: Vec<Vec<ExampleLabels>> = (0..n)
            .map(|i| {
                let v = self.views[i].0;
                let (_, flipped) = self.owner(v);
                let mut shapes = vec![0; np];
                for p in 0..np {
                    shapes[to_view_part(p, flipped)] = v * ns + local_shape[i][p];
                }
                (0..masks[i].len())
                    .map(|j| {
                        let mut patterns = vec![0; np];
                        for p in 0..np {
                            patterns[to_view_part(p, flipped)] = pattern_of[i][j][p];
                        }
                        let occluded = (0..topo.num_landmarks())
                            .map(|k| {
                                let p = topo.part_of(k);
                                design.states.patterns[p][v][patterns[p]][topo.slot(k)]
                            })
                            .collect();
                        ExampleLabels {
                            points: self.points[i].clone(),
                            shapes: shapes.clone(),
                            patterns,
                            occluded,
                        }
                    })
                    .collect()
            })
            .collect();

        self.fill_anchors(&mut design, &owner_points, &local_shape, |p| topo.landmarks_of(p).to_vec(), &shape_centers);
        Ok(Labeled { design, labels })
    }

    /// Anchors from mean cell displacements, computed in the owner frame
    /// and mirrored onto the partner viewpoint.
    fn fill_anchors(
        &self,
        design: &mut ComponentDesign,
        owner_points: &[Vec<[f64; 2]>],
        local_shape: &[Vec<usize>],
        part_points: impl Fn(usize) -> Vec<usize>,
        shape_centers: &[Vec<Vec<Vec<f64>>>],
    ) {
        let topo = Topology::new(design.topology.clone()).expect("valid topology");
        let (nv, ns) = (design.states.viewpoints, design.states.shapes);
        let np = topo.num_parts();
        let n = owner_points.len();
        let cell_of = |p: [f64; 2]| canvas_cell(p, design.cell_size, design.feature_scale);
        let part_cells: Vec<Vec<(i64, i64)>> = (0..n)
            .map(|i| {
                (0..np)
                    .map(|p| cell_of(centroid(part_points(p).into_iter().map(|k| owner_points[i][k]))))
                    .collect()
            })
            .collect();
        let mirror_p = topo.part_mirror().map(<[usize]>::to_vec);
        let mirror_l = topo.landmark_mirror().map(<[usize]>::to_vec);
        for v in 0..nv {
            if self.owner(v).0 != v {
                continue;
            }
            let members: Vec<usize> = (0..n).filter(|&i| self.owner(self.views[i].0).0 == v).collect();
            for s in 0..ns {
                let st = v * ns + s;
                for p in 0..np {
                    let in_state: Vec<usize> = members.iter().copied().filter(|&i| local_shape[i][p] == s).collect();
                    for &k in topo.landmarks_of(p) {
                        let mean = mean_disp(in_state.iter().map(|&i| {
                            let c = cell_of(owner_points[i][k]);
                            (c.0 - part_cells[i][p].0, c.1 - part_cells[i][p].1)
                        }));
                        design.landmark_anchors[k][st] = match mean {
                            Some(a) => a,
                            None => {
                                // empty cluster: fall back to the center's offset
                                let slot = topo.slot(k);
                                let c = &shape_centers[p][v][s];
                                let scale = design.feature_scale / design.cell_size as f64;
                                [
                                    (c.get(2 * slot).copied().unwrap_or(0.0) * scale).round() as i64,
                                    (c.get(2 * slot + 1).copied().unwrap_or(0.0) * scale).round() as i64,
                                ]
                            }
                        };
                    }
                    if let Some(q) = topo.parent(p) {
                        let pick = |filter: bool| {
                            mean_disp(members.iter().filter(|&&i| !filter || local_shape[i][p] == s).map(|&i| {
                                (part_cells[i][p].0 - part_cells[i][q].0, part_cells[i][p].1 - part_cells[i][q].1)
                            }))
                        };
                        design.part_anchors[p][st] = pick(true).or_else(|| pick(false)).unwrap_or([0, 0]);
                    }
                }
            }
        }
        for v in 0..nv {
            let (ov, flipped) = self.owner(v);
            if !flipped {
                continue;
            }
            let (mp, ml) = (mirror_p.as_ref().expect("mirror"), mirror_l.as_ref().expect("mirror"));
            for s in 0..ns {
                let (src, dst) = (ov * ns + s, v * ns + s);
                for k in 0..topo.num_landmarks() {
                    let [ax, ay] = design.landmark_anchors[k][src];
                    design.landmark_anchors[ml[k]][dst] = [-ax, ay];
                }
                for p in 0..np {
                    let [ax, ay] = design.part_anchors[p][src];
                    design.part_anchors[mp[p]][dst] = [-ax, ay];
                }
            }
        }
    }

    /// Seven single-landmark parts, one shape, visible/occluded patterns.
    fn label_low_res(&self, full: &[Vec<ExampleLabels>]) -> Result<Labeled> {
        let cfg = self.config;
        let topo = Topology::face_low_res();
        let groups = low_res_point_groups();
        if self.topology.num_landmarks() != 68 {
            return Err(Error::Config("the low-resolution component needs the 68-landmark face".into()));
        }
        let nv = cfg.viewpoints;
        let np = topo.num_parts();
        let states = StateSpace {
            viewpoints: nv,
            shapes: 1,
            occlusions: 2,
            viewpoint_mirror: (0..nv).map(|v| nv - 1 - v).collect(),
            patterns: vec![vec![vec![vec![false], vec![true]]; nv]; np],
        };
        let mut design = ComponentDesign {
            mixture: Mixture::LowRes,
            topology: topo.spec().clone(),
            states,
            cell_size: cfg.low_res_cell_size,
            template: [cfg.low_res_template_size; 2],
            feature_scale: 0.5,
            landmark_anchors: vec![vec![[0, 0]; nv]; np],
            part_anchors: vec![vec![[0, 0]; nv]; np],
        };
        let n = self.points.len();
        let labels: Vec<Vec<ExampleLabels>> = (0..n)
            .map(|i| {
                let v = self.views[i].0;
                full[i]
                    .iter()
                    .map(|f| {
                        let points: Vec<[f64; 2]> = groups.iter().map(|g| group_mean(&f.points, g)).collect();
                        let occluded: Vec<bool> = groups
                            .iter()
                            .map(|g| 2 * g.iter().filter(|&&k| f.occluded[k]).count() >= g.len())
                            .collect();
                        ExampleLabels {
                            points,
                            shapes: vec![v; np],
                            patterns: occluded.iter().map(|&o| usize::from(o)).collect(),
                            occluded,
                        }
                    })
                    .collect()
            })
            .collect();
        let owner_points: Vec<Vec<[f64; 2]>> = (0..n)
            .map(|i| {
                let pts: Vec<[f64; 2]> = groups.iter().map(|g| group_mean(&self.points[i], g)).collect();
                if self.owner(self.views[i].0).1 {
                    mirror_points(&pts, topo.landmark_mirror().expect("built-in mirror"), self.canvas_w)
                } else {
                    pts
                }
            })
            .collect();
        let local = vec![vec![0usize; np]; n];
        let centers = vec![vec![vec![vec![0.0, 0.0]]; nv]; np];
        self.fill_anchors(&mut design, &owner_points, &local, |p| vec![p], &centers);
        Ok(Labeled { design, labels })
    }
}

fn mean_disp(values: impl Iterator<Item = (i64, i64)>) -> Option<[i64; 2]> {
    let (mut sx, mut sy, mut n) = (0i64, 0i64, 0i64);
    for (x, y) in values {
        sx += x;
        sy += y;
        n += 1;
    }
    (n > 0).then(|| [(sx as f64 / n as f64).round() as i64, (sy as f64 / n as f64).round() as i64])
}
