//! Exact max-sum inference over locations, shapes and occlusion patterns.
//!
//! Parts are processed leaves-first. A landmark sends its part one message
//! per `(shape, pattern)` channel: a distance transform of its appearance
//! response when the pattern shows it, a constant when the pattern hides
//! it. A part sends its parent the transform of its accumulated messages
//! under the child-shape spring, maximized over its own states.

mod gdt;
mod naive;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;

pub use gdt::{gdt_1d, gdt_2d};
pub(crate) use gdt::transform_2d;
pub use naive::{infer_naive, NaiveResult, NAIVE_LIMIT};

use crate::error::{Error, Result};
use crate::features::FeatureLevel;
use crate::model::{Component, Configuration, Model, NodeState};
use crate::NEG_INF;

/// Knobs for [`infer_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferenceOptions {
    /// Occlusion margin `m`: every occluded landmark costs `m / N_l`.
    pub loss_margin: f64,
    /// Also run (and discard) transforms for channels that hide a landmark.
    /// Only useful as a timing baseline.
    pub transform_occluded: bool,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            loss_margin: 0.0,
            transform_occluded: false,
        }
    }
}

/// Distance-transform counts of one inference run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DtCounters {
    pub landmark: usize,
    pub part: usize,
}

/// Appearance responses of every landmark template at every grid cell.
#[derive(Clone, Debug)]
pub struct UnaryResponses {
    pub width: usize,
    pub height: usize,
    /// Indexed `[landmark * states + state]`.
    pub maps: Vec<Arc<Vec<f64>>>,
}

impl UnaryResponses {
    pub fn compute(model: &Model, component: usize, level: &FeatureLevel) -> Self {
        let comp = model.component(component);
        let sv = comp.num_states();
        let zero = Arc::new(vec![0.0; level.width * level.height]);
        let maps = (0..comp.topology.num_landmarks() * sv)
            .into_par_iter()
            .map(|i| {
                let t = model.template(component, i / sv, i % sv);
                if t.iter().all(|&v| v == 0.0) {
                    zero.clone()
                } else {
                    Arc::new(level.correlate(t, comp.template_h, comp.template_w))
                }
            })
            .collect();
        Self {
            width: level.width,
            height: level.height,
            maps,
        }
    }
}

const NONE: u32 = u32::MAX;

struct PartTables {
    /// `[child channel]` source location for every parent location; empty
    /// when the channel carries no finite score.
    dt_arg: Vec<Vec<u32>>,
    /// `[parent channel][parent location]` chosen child channel.
    choice: Vec<Vec<u32>>,
}

/// Message tables of one inference run, kept for backtracking.
pub struct Inference {
    component: usize,
    level: usize,
    rotation: usize,
    width: usize,
    height: usize,
    channels: usize,
    /// `[landmark][channel]` transform argmax; empty for hidden channels.
    landmark_arg: Vec<Vec<Vec<u32>>>,
    parts: Vec<Option<PartTables>>,
    root_scores: Vec<f64>,
    root_choice: Vec<u32>,
    counters: DtCounters,
}

impl Inference {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn component(&self) -> usize {
        self.component
    }

    /// True when the level has no cells and nothing was scored.
    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    /// Best total score for each root location (row-major).
    pub fn root_scores(&self) -> &[f64] {
        &self.root_scores
    }

    pub fn counters(&self) -> DtCounters {
        self.counters
    }

    /// Highest-scoring root location; ties go to the smallest `(y, x)`.
    pub fn best_location(&self) -> Option<(usize, usize)> {
        let mut best: Option<usize> = None;
        for (i, &v) in self.root_scores.iter().enumerate() {
            if v > NEG_INF && best.map_or(true, |b| v > self.root_scores[b]) {
                best = Some(i);
            }
        }
        best.map(|i| (i % self.width, i / self.width))
    }

    pub fn best(&self, model: &Model) -> Option<(f64, Configuration)> {
        let (x, y) = self.best_location()?;
        Some((self.root_scores[y * self.width + x], self.backtrack(model, x, y)?))
    }

    /// Full configuration achieving the root score at `(x, y)`.
    pub fn backtrack(&self, model: &Model, x: usize, y: usize) -> Option<Configuration> {
        let at = y * self.width + x;
        if self.root_scores.get(at).map_or(true, |&v| v == NEG_INF) {
            return None;
        }
        let comp = model.component(self.component);
        let topo = &comp.topology;
        let o_count = comp.num_occlusions();
        let unset = NodeState {
            x: 0,
            y: 0,
            state: 0,
            occlusion: 0,
        };
        let mut parts = vec![unset; topo.num_parts()];
        let mut landmarks = vec![unset; topo.num_landmarks()];
        let mut loc = vec![0usize; topo.num_parts()];
        let mut chan = vec![0usize; topo.num_parts()];
        let root = topo.root();
        loc[root] = at;
        chan[root] = self.root_choice[at] as usize;
        for &j in topo.preorder() {
            if let Some(parent) = topo.parent(j) {
                let tables = self.parts[j].as_ref().expect("non-root tables");
                let c = tables.choice[chan[parent]][loc[parent]];
                debug_assert_ne!(c, NONE);
                chan[j] = c as usize;
                loc[j] = tables.dt_arg[chan[j]][loc[parent]] as usize;
            }
            let (s, o) = (chan[j] / o_count, chan[j] % o_count);
            let (px, py) = ((loc[j] % self.width) as i64, (loc[j] / self.width) as i64);
            parts[j] = NodeState {
                x: px,
                y: py,
                state: s,
                occlusion: o,
            };
            for &k in topo.landmarks_of(j) {
                let arg = &self.landmark_arg[k][chan[j]];
                let (lx, ly) = if arg.is_empty() {
                    let a = comp.landmark_anchors[k][s];
                    (px + a[0], py + a[1])
                } else {
                    let l = arg[loc[j]] as usize;
                    ((l % self.width) as i64, (l / self.width) as i64)
                };
                landmarks[k] = NodeState {
                    x: lx,
                    y: ly,
                    state: s,
                    occlusion: o,
                };
            }
        }
        Some(Configuration {
            component: self.component,
            level: self.level,
            rotation: self.rotation,
            parts,
            landmarks,
        })
    }

    /// Tag backtracked configurations with their pyramid position.
    pub fn set_track(&mut self, level: usize, rotation: usize) {
        self.level = level;
        self.rotation = rotation;
    }
}

/// Validated spring weights as distance-transform coefficients
/// `[wx1, wx2, wy1, wy2]`.
fn dt_weights(w: [f64; 4]) -> Result<[f64; 4]> {
    if !(w[2] <= 0.0 && w[3] <= 0.0) || w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!(
            "spring weights {w:?} are not concave; squared terms must be <= 0"
        )));
    }
    // displacement is (source - target), the transform uses (target - source)
    Ok([-w[0], w[2], -w[1], w[3]])
}

/// Run inference for one component on one level with m = 0.
pub fn infer(model: &Model, component: usize, level: &FeatureLevel) -> Result<Inference> {
    infer_with(model, component, level, None, InferenceOptions::default())
}

/// Loss-augmented inference: maximizes `score - m * (occluded fraction)`.
pub fn infer_augmented(model: &Model, component: usize, level: &FeatureLevel, m: f64) -> Result<Inference> {
    infer_with(
        model,
        component,
        level,
        None,
        InferenceOptions {
            loss_margin: m,
            ..Default::default()
        },
    )
}

/// Inference with explicit options and optionally precomputed responses.
pub fn infer_with(
    model: &Model,
    component: usize,
    level: &FeatureLevel,
    unary: Option<&UnaryResponses>,
    options: InferenceOptions,
) -> Result<Inference> {
    if component >= model.components().len() {
        return Err(Error::Domain(format!("component {component} does not exist")));
    }
    if !(options.loss_margin >= 0.0) || !options.loss_margin.is_finite() {
        return Err(Error::Domain(format!("loss margin {} must be >= 0", options.loss_margin)));
    }
    let comp = model.component(component);
    let (width, height) = (level.width, level.height);
    let topo = &comp.topology;
    let mut result = Inference {
        component,
        level: 0,
        rotation: 0,
        width,
        height,
        channels: comp.num_states() * comp.num_occlusions(),
        landmark_arg: vec![Vec::new(); topo.num_landmarks()],
        parts: (0..topo.num_parts()).map(|_| None).collect(),
        root_scores: Vec::new(),
        root_choice: Vec::new(),
        counters: DtCounters::default(),
    };
    if width == 0 || height == 0 {
        return Ok(result);
    }
    let owned;
    let unary = match unary {
        Some(u) => {
            if u.width != width || u.height != height {
                return Err(Error::Domain("unary responses do not match the level".into()));
            }
            u
        }
        None => {
            owned = UnaryResponses::compute(model, component, level);
            &owned
        }
    };
    Messenger {
        model,
        comp,
        unary,
        options,
        width,
        height,
        landmark_dts: AtomicUsize::new(0),
        part_dts: AtomicUsize::new(0),
    }
    .run(&mut result)?;
    Ok(result)
}

struct Messenger<'a> {
    model: &'a Model,
    comp: &'a Component,
    unary: &'a UnaryResponses,
    options: InferenceOptions,
    width: usize,
    height: usize,
    landmark_dts: AtomicUsize,
    part_dts: AtomicUsize,
}

type Channels = Vec<Option<Vec<f64>>>;

impl Messenger<'_> {
    fn run(&self, result: &mut Inference) -> Result<()> {
        let topo = &self.comp.topology;
        let w = self.model.params();
        let mut upward: Vec<Option<Channels>> = (0..topo.num_parts()).map(|_| None).collect();
        for &j in topo.preorder().iter().rev() {
            let mut acc = self.landmark_messages(j, result)?;
            for &c in topo.children(j) {
                let msg = upward[c].take().expect("children processed first");
                for (a, m) in acc.iter_mut().zip(msg) {
                    match (a.as_mut(), m) {
                        (Some(a), Some(m)) => a.iter_mut().zip(&m).for_each(|(x, y)| *x += y),
                        _ => *a = None,
                    }
                }
            }
            if topo.parent(j).is_some() {
                let (msg, tables) = self.part_message(j, acc)?;
                upward[j] = Some(msg);
                result.parts[j] = Some(tables);
            } else {
                let offset = w[self.comp.offset()];
                let n = self.width * self.height;
                let mut scores = vec![NEG_INF; n];
                let mut choice = vec![0u32; n];
                for (ch, grid) in acc.iter().enumerate() {
                    let Some(grid) = grid else { continue };
                    for l in 0..n {
                        let v = grid[l] + offset;
                        if v > scores[l] {
                            scores[l] = v;
                            choice[l] = ch as u32;
                        }
                    }
                }
                result.root_scores = scores;
                result.root_choice = choice;
            }
        }
        result.counters = DtCounters {
            landmark: self.landmark_dts.load(Ordering::Relaxed),
            part: self.part_dts.load(Ordering::Relaxed),
        };
        Ok(())
    }

    /// Sum of the landmark messages of part `j` per `(s, o)` channel.
    fn landmark_messages(&self, j: usize, result: &mut Inference) -> Result<Channels> {
        let comp = self.comp;
        let (sv, oc) = (comp.num_states(), comp.num_occlusions());
        let n = self.width * self.height;
        let w = self.model.params();
        let penalty = self.options.loss_margin / comp.topology.num_landmarks() as f64;
        let mut acc: Channels = (0..sv * oc).map(|_| Some(vec![0.0; n])).collect();
        for &k in comp.topology.landmarks_of(j) {
            let per_channel: Vec<Result<(Option<Vec<f64>>, Vec<u32>)>> = (0..sv * oc)
                .into_par_iter()
                .map(|ch| {
                    let (s, o) = (ch / oc, ch % oc);
                    let b = w[comp.landmark_bias(k, s, o)];
                    let hidden = comp.occluded(k, s, o);
                    if hidden && !self.options.transform_occluded {
                        return Ok((Some(vec![b - penalty; 1]), Vec::new()));
                    }
                    let weights = dt_weights(self.model.spring(comp.landmark_spring(k, s)))?;
                    let a = comp.landmark_anchors[k][s];
                    let src = &self.unary.maps[k * sv + s];
                    let (vals, arg) = transform_2d(
                        src,
                        self.width,
                        self.height,
                        weights,
                        (a[0], a[1]),
                        (self.width, self.height),
                    );
                    self.landmark_dts.fetch_add(1, Ordering::Relaxed);
                    if hidden {
                        return Ok((Some(vec![b - penalty; 1]), Vec::new()));
                    }
                    let vals: Vec<f64> = vals.into_iter().map(|v| v + b).collect();
                    Ok((Some(vals), arg))
                })
                .collect();
            let mut args = Vec::with_capacity(sv * oc);
            for (ch, r) in per_channel.into_iter().enumerate() {
                let (msg, arg) = r?;
                args.push(arg);
                let Some(msg) = msg else { continue };
                let Some(a) = acc[ch].as_mut() else { continue };
                if msg.len() == 1 {
                    if msg[0] == NEG_INF {
                        acc[ch] = None;
                    } else {
                        a.iter_mut().for_each(|x| *x += msg[0]);
                    }
                } else if w[comp.landmark_bias(k, ch / oc, ch % oc)] == NEG_INF {
                    acc[ch] = None;
                } else {
                    a.iter_mut().zip(&msg).for_each(|(x, y)| *x += y);
                }
            }
            result.landmark_arg[k] = args;
        }
        Ok(acc)
    }

    /// Message from non-root part `j` to its parent.
    fn part_message(&self, j: usize, acc: Channels) -> Result<(Channels, PartTables)> {
        let comp = self.comp;
        let (sv, oc) = (comp.num_states(), comp.num_occlusions());
        let n = self.width * self.height;
        let w = self.model.params();
        let transformed: Vec<Result<Option<(Vec<f64>, Vec<u32>)>>> = acc
            .into_par_iter()
            .enumerate()
            .map(|(ch, grid)| {
                let Some(grid) = grid else { return Ok(None) };
                let s = ch / oc;
                let weights = dt_weights(self.model.spring(comp.part_spring(j, s)))?;
                let a = comp.part_anchors[j][s];
                self.part_dts.fetch_add(1, Ordering::Relaxed);
                Ok(Some(transform_2d(
                    &grid,
                    self.width,
                    self.height,
                    weights,
                    (a[0], a[1]),
                    (self.width, self.height),
                )))
            })
            .collect();
        let mut nu = Vec::with_capacity(sv * oc);
        for t in transformed {
            nu.push(t?);
        }
        let results: Vec<(Option<Vec<f64>>, Vec<u32>)> = (0..sv * oc)
            .into_par_iter()
            .map(|pch| {
                let (si, oi) = (pch / oc, pch % oc);
                let mut best = vec![NEG_INF; n];
                let mut choice = vec![NONE; n];
                for (cch, t) in nu.iter().enumerate() {
                    let Some((vals, arg)) = t else { continue };
                    let b = w[comp.part_bias(j, si, cch / oc, oi, cch % oc)];
                    if b == NEG_INF {
                        continue;
                    }
                    for l in 0..n {
                        let v = vals[l] + b;
                        if v == NEG_INF {
                            continue;
                        }
                        let cur = choice[l];
                        // ties: smallest child location, then smallest channel
                        if cur == NONE || v > best[l] || (v == best[l] && arg[l] < nu[cur as usize].as_ref().expect("chosen").1[l]) {
                            best[l] = v;
                            choice[l] = cch as u32;
                        }
                    }
                }
                let any = choice.iter().any(|&c| c != NONE);
                (any.then_some(best), choice)
            })
            .collect();
        let mut msg = Vec::with_capacity(sv * oc);
        let mut choice = Vec::with_capacity(sv * oc);
        for (m, c) in results {
            msg.push(m);
            choice.push(c);
        }
        let dt_arg = nu.into_iter().map(|t| t.map(|(_, a)| a).unwrap_or_default()).collect();
        Ok((msg, PartTables { dt_arg, choice }))
    }
}

/// Best configuration over every component whose cell size matches the
/// level. Ties go to the lower component index.
pub fn infer_best(model: &Model, level: &FeatureLevel, m: f64) -> Result<Option<(f64, Configuration)>> {
    let mut best: Option<(f64, Configuration)> = None;
    for c in 0..model.components().len() {
        if model.component(c).cell_size != level.cell_size {
            continue;
        }
        let inf = infer_augmented(model, c, level, m)?;
        if let Some((score, cfg)) = inf.best(model) {
            if best.as_ref().map_or(true, |(b, _)| score > *b) {
                best = Some((score, cfg));
            }
        }
    }
    Ok(best)
}

impl Inference {
    /// Number of `(shape, pattern)` channels per node.
    pub fn channels(&self) -> usize {
        self.channels
    }
}
