//! Model structure, parameter layout, scoring and the joint feature map.

mod io;
mod mirror;
mod states;
mod topology;

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use io::{load_model, model_from_str, model_to_string, save_model, MODEL_FORMAT, MODEL_VERSION};
pub use mirror::{flip_template, tie_mirror_parameters};
pub use states::StateSpace;
pub use topology::{face68_mirror, low_res_point_groups, PartSpec, Topology, TopologySpec};

use crate::error::{Error, Result};
use crate::features::{FeatureLevel, HOG_DIM};
use crate::NEG_INF;

/// Which global mixture a component implements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mixture {
    Full,
    LowRes,
}

/// Displacement of a child relative to its anchored parent, in cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeformationFeature {
    pub dx: i64,
    pub dy: i64,
}

impl DeformationFeature {
    pub fn between(child: (i64, i64), parent: (i64, i64), anchor: [i64; 2]) -> Self {
        Self {
            dx: child.0 - parent.0 - anchor[0],
            dy: child.1 - parent.1 - anchor[1],
        }
    }

    /// `(dx, dy, dx^2, dy^2)`
    pub fn psi(&self) -> [f64; 4] {
        let (dx, dy) = (self.dx as f64, self.dy as f64);
        [dx, dy, dx * dx, dy * dy]
    }
}

/// One mixture component: a topology with its state spaces, anchors and
/// template geometry. Its parameters live in a slice of the model vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub mixture: Mixture,
    pub topology: Topology,
    pub states: StateSpace,
    pub cell_size: usize,
    pub template_h: usize,
    pub template_w: usize,
    /// `[landmark][state]` rest offset `(x, y)` from the owning part.
    pub landmark_anchors: Vec<Vec<[i64; 2]>>,
    /// `[part][state]` rest offset from the parent part (unused for the root).
    pub part_anchors: Vec<Vec<[i64; 2]>>,
    base: usize,
}

impl Component {
    pub fn new(
        mixture: Mixture,
        topology: Topology,
        states: StateSpace,
        cell_size: usize,
        template: (usize, usize),
    ) -> Result<Self> {
        let sv = states.num_states();
        let comp = Self {
            mixture,
            landmark_anchors: vec![vec![[0, 0]; sv]; topology.num_landmarks()],
            part_anchors: vec![vec![[0, 0]; sv]; topology.num_parts()],
            topology,
            states,
            cell_size,
            template_h: template.0,
            template_w: template.1,
            base: 0,
        };
        comp.validate()?;
        Ok(comp)
    }

    pub fn validate(&self) -> Result<()> {
        self.states.validate(&self.topology)?;
        if self.cell_size == 0 {
            return Err(Error::Config("cell size must be positive".into()));
        }
        if self.template_h % 2 == 0 || self.template_w % 2 == 0 {
            return Err(Error::Config(format!(
                "template size {}x{} must be odd in both dimensions",
                self.template_h, self.template_w
            )));
        }
        let sv = self.states.num_states();
        if self.landmark_anchors.len() != self.topology.num_landmarks()
            || self.landmark_anchors.iter().any(|a| a.len() != sv)
            || self.part_anchors.len() != self.topology.num_parts()
            || self.part_anchors.iter().any(|a| a.len() != sv)
        {
            return Err(Error::Config("anchor tables do not match the state space".into()));
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.states.num_states()
    }

    pub fn num_occlusions(&self) -> usize {
        self.states.occlusions
    }

    pub fn appearance_len(&self) -> usize {
        self.template_h * self.template_w * HOG_DIM
    }

    fn sizes(&self) -> [usize; 5] {
        let (nl, np, sv, o) = (
            self.topology.num_landmarks(),
            self.topology.num_parts(),
            self.num_states(),
            self.num_occlusions(),
        );
        [
            nl * sv * self.appearance_len(),
            nl * sv * 4,
            np * sv * 4,
            np * sv * sv * o * o,
            nl * sv * o,
        ]
    }

    /// Number of parameters owned by this component.
    pub fn param_len(&self) -> usize {
        self.sizes().iter().sum::<usize>() + 1
    }

    /// Offset of this component's parameters in the model vector.
    pub fn base(&self) -> usize {
        self.base
    }

    pub fn param_range(&self) -> Range<usize> {
        self.base..self.base + self.param_len()
    }

    fn section(&self, i: usize) -> usize {
        self.base + self.sizes()[..i].iter().sum::<usize>()
    }

    pub fn appearance_range(&self, landmark: usize, state: usize) -> Range<usize> {
        let len = self.appearance_len();
        let start = self.section(0) + (landmark * self.num_states() + state) * len;
        start..start + len
    }

    /// Start of the 4 spring weights `(dx, dy, dx^2, dy^2)`.
    pub fn landmark_spring(&self, landmark: usize, state: usize) -> usize {
        self.section(1) + (landmark * self.num_states() + state) * 4
    }

    pub fn part_spring(&self, part: usize, state: usize) -> usize {
        self.section(2) + (part * self.num_states() + state) * 4
    }

    /// Bias between `part` (state `s_child`, pattern `o_child`) and its
    /// parent (state `s_parent`, pattern `o_parent`).
    pub fn part_bias(&self, part: usize, s_parent: usize, s_child: usize, o_parent: usize, o_child: usize) -> usize {
        let (sv, o) = (self.num_states(), self.num_occlusions());
        self.section(3) + (((part * sv + s_parent) * sv + s_child) * o + o_parent) * o + o_child
    }

    /// Bias of a landmark sharing state `(state, o)` with its part.
    pub fn landmark_bias(&self, landmark: usize, state: usize, o: usize) -> usize {
        self.section(4) + (landmark * self.num_states() + state) * self.num_occlusions() + o
    }

    pub fn offset(&self) -> usize {
        self.base + self.param_len() - 1
    }

    /// Whether `landmark` is hidden under its part's pattern `o` in `state`.
    #[inline]
    pub fn occluded(&self, landmark: usize, state: usize, o: usize) -> bool {
        let part = self.topology.part_of(landmark);
        self.states.pattern(part, state, o)[self.topology.slot(landmark)]
    }
}

/// Model structure plus its flattened parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    components: Vec<Component>,
    params: Vec<f64>,
}

impl Model {
    /// Zero weights with the viewpoint-purity `-inf` entries installed.
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let mut model = Self::with_params(components, Vec::new(), false)?;
        model.params = vec![0.0; model.num_params()];
        for c in 0..model.components.len() {
            let comp = &model.components[c];
            let mut masked = Vec::new();
            for p in 0..comp.topology.num_parts() {
                if comp.topology.parent(p).is_none() {
                    continue;
                }
                for si in 0..comp.num_states() {
                    for sj in 0..comp.num_states() {
                        if comp.states.viewpoint_of(si) == comp.states.viewpoint_of(sj) {
                            continue;
                        }
                        for oi in 0..comp.num_occlusions() {
                            for oj in 0..comp.num_occlusions() {
                                masked.push(comp.part_bias(p, si, sj, oi, oj));
                            }
                        }
                    }
                }
            }
            for i in masked {
                model.params[i] = NEG_INF;
            }
        }
        Ok(model)
    }

    /// Wrap existing parameters; the vector length must match the layout.
    pub fn from_params(components: Vec<Component>, params: Vec<f64>) -> Result<Self> {
        Self::with_params(components, params, true)
    }

    fn with_params(mut components: Vec<Component>, params: Vec<f64>, check: bool) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("a model needs at least one component".into()));
        }
        let mut base = 0;
        for comp in &mut components {
            comp.validate()?;
            comp.base = base;
            base += comp.param_len();
        }
        if check && params.len() != base {
            return Err(Error::Config(format!(
                "parameter vector has {} entries, layout needs {base}",
                params.len()
            )));
        }
        Ok(Self { components, params })
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn component(&self, c: usize) -> &Component {
        &self.components[c]
    }

    /// Replace anchors or patterns of a component; the layout must not change.
    pub fn component_mut(&mut self, c: usize) -> &mut Component {
        &mut self.components[c]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Config("parameter vector length mismatch".into()));
        }
        self.params = params;
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.components.iter().map(Component::param_len).sum()
    }

    pub fn template(&self, c: usize, landmark: usize, state: usize) -> &[f64] {
        &self.params[self.components[c].appearance_range(landmark, state)]
    }

    pub fn spring(&self, at: usize) -> [f64; 4] {
        [self.params[at], self.params[at + 1], self.params[at + 2], self.params[at + 3]]
    }

    /// Indices of the squared-displacement spring weights.
    pub fn quadratic_spring_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for comp in &self.components {
            for s in 0..comp.num_states() {
                for k in 0..comp.topology.num_landmarks() {
                    let i = comp.landmark_spring(k, s);
                    out.extend([i + 2, i + 3]);
                }
                for p in 0..comp.topology.num_parts() {
                    if comp.topology.parent(p).is_some() {
                        let i = comp.part_spring(p, s);
                        out.extend([i + 2, i + 3]);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Landmark bias indices of states that hide the landmark.
    pub fn occluded_landmark_bias_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for comp in &self.components {
            for k in 0..comp.topology.num_landmarks() {
                for s in 0..comp.num_states() {
                    for o in 0..comp.num_occlusions() {
                        if comp.occluded(k, s, o) {
                            out.push(comp.landmark_bias(k, s, o));
                        }
                    }
                }
            }
        }
        out
    }
}

/// Location and mixture state of one node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeState {
    pub x: i64,
    pub y: i64,
    pub state: usize,
    pub occlusion: usize,
}

/// A full hypothesis for one component on one feature level.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Configuration {
    pub component: usize,
    /// Pyramid scale index.
    pub level: usize,
    /// Pyramid rotation index.
    pub rotation: usize,
    pub parts: Vec<NodeState>,
    pub landmarks: Vec<NodeState>,
}

impl Configuration {
    /// Per-landmark occlusion flags implied by the landmark states.
    pub fn occlusion_flags(&self, model: &Model) -> Vec<bool> {
        let comp = model.component(self.component);
        self.landmarks
            .iter()
            .enumerate()
            .map(|(k, n)| comp.occluded(k, n.state, n.occlusion))
            .collect()
    }

    /// Fraction of occluded landmarks.
    pub fn occluded_fraction(&self, model: &Model) -> f64 {
        let flags = self.occlusion_flags(model);
        flags.iter().filter(|&&f| f).count() as f64 / flags.len().max(1) as f64
    }
}

fn check_config<'a>(model: &'a Model, level: &FeatureLevel, config: &Configuration) -> Result<&'a Component> {
    let comp = model
        .components
        .get(config.component)
        .ok_or_else(|| Error::Domain(format!("component {} does not exist", config.component)))?;
    let topo = &comp.topology;
    if config.parts.len() != topo.num_parts() || config.landmarks.len() != topo.num_landmarks() {
        return Err(Error::Domain("configuration does not match the topology".into()));
    }
    let (sv, o) = (comp.num_states(), comp.num_occlusions());
    for n in config.parts.iter().chain(&config.landmarks) {
        if n.state >= sv || n.occlusion >= o {
            return Err(Error::Domain(format!(
                "state ({}, {}) out of range",
                n.state, n.occlusion
            )));
        }
    }
    for (p, n) in config.parts.iter().enumerate() {
        if !level.contains(n.x, n.y) {
            return Err(Error::Domain(format!("part {p} at ({}, {}) lies outside the grid", n.x, n.y)));
        }
    }
    for (k, n) in config.landmarks.iter().enumerate() {
        if !comp.occluded(k, n.state, n.occlusion) && !level.contains(n.x, n.y) {
            return Err(Error::Domain(format!(
                "visible landmark {k} at ({}, {}) lies outside the grid",
                n.x, n.y
            )));
        }
    }
    Ok(comp)
}

fn dot_block(w: &[f64], x: &[f32]) -> f64 {
    w.iter().zip(x).map(|(a, &b)| a * b as f64).sum()
}

fn dot4(w: [f64; 4], psi: [f64; 4]) -> f64 {
    w[0] * psi[0] + w[1] * psi[1] + w[2] * psi[2] + w[3] * psi[3]
}

/// Score of a configuration: landmark appearance, springs, biases and the
/// component offset. Occluded landmarks have no appearance term.
pub fn score_configuration(model: &Model, level: &FeatureLevel, config: &Configuration) -> Result<f64> {
    let comp = check_config(model, level, config)?;
    let topo = &comp.topology;
    let w = &model.params;
    let mut score = w[comp.offset()];
    for (p, n) in config.parts.iter().enumerate() {
        let Some(q) = topo.parent(p) else { continue };
        let par = &config.parts[q];
        let b = w[comp.part_bias(p, par.state, n.state, par.occlusion, n.occlusion)];
        if b == NEG_INF {
            return Ok(NEG_INF);
        }
        let d = DeformationFeature::between((n.x, n.y), (par.x, par.y), comp.part_anchors[p][n.state]);
        score += b + dot4(model.spring(comp.part_spring(p, n.state)), d.psi());
    }
    for (k, n) in config.landmarks.iter().enumerate() {
        let par = &config.parts[topo.part_of(k)];
        if n.state != par.state || n.occlusion != par.occlusion {
            return Ok(NEG_INF);
        }
        let b = w[comp.landmark_bias(k, n.state, n.occlusion)];
        if b == NEG_INF {
            return Ok(NEG_INF);
        }
        let d = DeformationFeature::between((n.x, n.y), (par.x, par.y), comp.landmark_anchors[k][n.state]);
        score += b + dot4(model.spring(comp.landmark_spring(k, n.state)), d.psi());
        if !comp.occluded(k, n.state, n.occlusion) {
            let patch = level.extract_patch(n.x, n.y, comp.template_h, comp.template_w);
            score += dot_block(&w[comp.appearance_range(k, n.state)], &patch);
        }
    }
    Ok(score)
}

/// Sparse joint feature vector: dense appearance blocks plus scalar entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureVector {
    /// `(start index, values)`; blocks may be shared between vectors.
    pub dense: Vec<(usize, Arc<[f32]>)>,
    pub sparse: Vec<(usize, f64)>,
}

impl FeatureVector {
    pub fn dot(&self, w: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (start, block) in &self.dense {
            acc += dot_block(&w[*start..*start + block.len()], block);
        }
        for &(i, v) in &self.sparse {
            acc += w[i] * v;
        }
        acc
    }

    /// `w += scale * self`
    pub fn add_to(&self, w: &mut [f64], scale: f64) {
        for (start, block) in &self.dense {
            for (wi, &v) in w[*start..*start + block.len()].iter_mut().zip(block.iter()) {
                *wi += scale * v as f64;
            }
        }
        for &(i, v) in &self.sparse {
            w[i] += scale * v;
        }
    }

    pub fn norm_sq(&self) -> f64 {
        let d: f64 = self
            .dense
            .iter()
            .flat_map(|(_, b)| b.iter())
            .map(|&v| (v as f64) * (v as f64))
            .sum();
        d + self.sparse.iter().map(|(_, v)| v * v).sum::<f64>()
    }

    /// Expand into a full-length dense vector.
    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        self.add_to(&mut out, 1.0);
        out
    }
}

/// Joint feature map of a configuration; `w . psi` equals its score.
pub fn assemble_feature_vector(model: &Model, level: &FeatureLevel, config: &Configuration) -> Result<FeatureVector> {
    let comp = check_config(model, level, config)?;
    let (h, w) = (comp.template_h, comp.template_w);
    assemble_with_patches(model, config, |k| {
        let n = &config.landmarks[k];
        Ok(Arc::from(level.extract_patch(n.x, n.y, h, w)))
    })
}

/// Like [`assemble_feature_vector`] but with caller-supplied landmark
/// patches (only requested for visible landmarks).
pub fn assemble_with_patches(
    model: &Model,
    config: &Configuration,
    mut patch: impl FnMut(usize) -> Result<Arc<[f32]>>,
) -> Result<FeatureVector> {
    let comp = model
        .components
        .get(config.component)
        .ok_or_else(|| Error::Domain(format!("component {} does not exist", config.component)))?;
    let topo = &comp.topology;
    if config.parts.len() != topo.num_parts() || config.landmarks.len() != topo.num_landmarks() {
        return Err(Error::Domain("configuration does not match the topology".into()));
    }
    let w = &model.params;
    let mut fv = FeatureVector::default();
    fv.sparse.push((comp.offset(), 1.0));
    let infinite = || Error::Domain("configuration has score -inf and no feature representation".into());
    for (p, n) in config.parts.iter().enumerate() {
        let Some(q) = topo.parent(p) else { continue };
        let par = &config.parts[q];
        let bi = comp.part_bias(p, par.state, n.state, par.occlusion, n.occlusion);
        if w[bi] == NEG_INF {
            return Err(infinite());
        }
        fv.sparse.push((bi, 1.0));
        let d = DeformationFeature::between((n.x, n.y), (par.x, par.y), comp.part_anchors[p][n.state]);
        push_spring(&mut fv, comp.part_spring(p, n.state), d);
    }
    for (k, n) in config.landmarks.iter().enumerate() {
        let par = &config.parts[topo.part_of(k)];
        if n.state != par.state || n.occlusion != par.occlusion {
            return Err(infinite());
        }
        let bi = comp.landmark_bias(k, n.state, n.occlusion);
        if w[bi] == NEG_INF {
            return Err(infinite());
        }
        fv.sparse.push((bi, 1.0));
        let d = DeformationFeature::between((n.x, n.y), (par.x, par.y), comp.landmark_anchors[k][n.state]);
        push_spring(&mut fv, comp.landmark_spring(k, n.state), d);
        if !comp.occluded(k, n.state, n.occlusion) {
            let block = patch(k)?;
            if block.len() != comp.appearance_len() {
                return Err(Error::Domain(format!("patch for landmark {k} has wrong length")));
            }
            fv.dense.push((comp.appearance_range(k, n.state).start, block));
        }
    }
    Ok(fv)
}

fn push_spring(fv: &mut FeatureVector, at: usize, d: DeformationFeature) {
    for (i, v) in d.psi().into_iter().enumerate() {
        if v != 0.0 {
            fv.sparse.push((at + i, v));
        }
    }
}
