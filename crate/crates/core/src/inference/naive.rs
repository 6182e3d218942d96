//! Exhaustive inference used as a test oracle.
//!
//! Every joint assignment of part locations and states is enumerated. Given
//! a part, each visible landmark is maximized over all grid cells by direct
//! patch dot products; a hidden landmark sits at its anchor. Ties go to the
//! lowest linear index: parts in pre-order, each as `(y, x, state, pattern)`.

use crate::error::{Error, Result};
use crate::features::FeatureLevel;
use crate::model::{Configuration, DeformationFeature, Model, NodeState};
use crate::NEG_INF;

/// Largest number of enumerated combinations `infer_naive` accepts.
pub const NAIVE_LIMIT: u128 = 100_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct NaiveResult {
    /// Best loss-augmented score (`-inf` when nothing is feasible).
    pub score: f64,
    pub config: Option<Configuration>,
}

fn spring_score(w: [f64; 4], d: DeformationFeature) -> f64 {
    let psi = d.psi();
    w[0] * psi[0] + w[1] * psi[1] + w[2] * psi[2] + w[3] * psi[3]
}

/// Brute-force maximizer of `score - m * (occluded fraction)`.
pub fn infer_naive(model: &Model, component: usize, level: &FeatureLevel, m: f64) -> Result<NaiveResult> {
    let comp = model
        .components()
        .get(component)
        .ok_or_else(|| Error::Domain(format!("component {component} does not exist")))?;
    let topo = &comp.topology;
    let (gw, gh) = (level.width, level.height);
    let cells = gw * gh;
    let (sv, oc) = (comp.num_states(), comp.num_occlusions());
    let per_part = (cells * sv * oc) as u128;
    let total = per_part
        .checked_pow(topo.num_parts() as u32)
        .and_then(|v| v.checked_mul(1 + (topo.num_landmarks() * cells) as u128))
        .unwrap_or(u128::MAX);
    if total > NAIVE_LIMIT {
        return Err(Error::TooLarge(total));
    }
    if cells == 0 {
        return Ok(NaiveResult {
            score: NEG_INF,
            config: None,
        });
    }
    let w = model.params();
    let penalty = m / topo.num_landmarks() as f64;

    // unary[k][s][cell] by direct patch products
    let unary: Vec<Vec<Vec<f64>>> = (0..topo.num_landmarks())
        .map(|k| {
            (0..sv)
                .map(|s| {
                    let t = model.template(component, k, s);
                    (0..cells)
                        .map(|c| {
                            let patch = level.extract_patch((c % gw) as i64, (c / gw) as i64, comp.template_h, comp.template_w);
                            t.iter().zip(&patch).map(|(a, &b)| a * b as f64).sum()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    // best[k][(cell * sv + s) * oc + o] = (value, landmark location)
    let mut best: Vec<Vec<(f64, (i64, i64))>> = Vec::with_capacity(topo.num_landmarks());
    for k in 0..topo.num_landmarks() {
        let mut table = vec![(NEG_INF, (0, 0)); cells * sv * oc];
        for pc in 0..cells {
            let (px, py) = ((pc % gw) as i64, (pc / gw) as i64);
            for s in 0..sv {
                let spring = model.spring(comp.landmark_spring(k, s));
                let anchor = comp.landmark_anchors[k][s];
                for o in 0..oc {
                    let b = w[comp.landmark_bias(k, s, o)];
                    if b == NEG_INF {
                        continue;
                    }
                    let entry = &mut table[(pc * sv + s) * oc + o];
                    if comp.occluded(k, s, o) {
                        let at = (px + anchor[0], py + anchor[1]);
                        let d = DeformationFeature::between(at, (px, py), anchor);
                        *entry = (b - penalty + spring_score(spring, d), at);
                        continue;
                    }
                    let mut bv = NEG_INF;
                    let mut bl = (0, 0);
                    for lc in 0..cells {
                        let at = ((lc % gw) as i64, (lc / gw) as i64);
                        let d = DeformationFeature::between(at, (px, py), anchor);
                        let v = unary[k][s][lc] + spring_score(spring, d);
                        if v > bv {
                            bv = v;
                            bl = at;
                        }
                    }
                    *entry = (b + bv, bl);
                }
            }
        }
        best.push(table);
    }

    // local[j][(cell * sv + s) * oc + o]: part's own landmark total
    let local: Vec<Vec<f64>> = (0..topo.num_parts())
        .map(|j| {
            (0..cells * sv * oc)
                .map(|i| topo.landmarks_of(j).iter().map(|&k| best[k][i].0).sum())
                .collect()
        })
        .collect();

    let order = topo.preorder().to_vec();
    let mut search = Search {
        model,
        component,
        order: &order,
        local: &local,
        width: gw,
        sv,
        oc,
        current: vec![0; topo.num_parts()],
        best_score: NEG_INF,
        best_assign: None,
    };
    search.recurse(0, w[comp.offset()]);

    let Some(assign) = search.best_assign else {
        return Ok(NaiveResult {
            score: NEG_INF,
            config: None,
        });
    };
    let node = |idx: usize| {
        let cell = idx / (sv * oc);
        NodeState {
            x: (cell % gw) as i64,
            y: (cell / gw) as i64,
            state: (idx / oc) % sv,
            occlusion: idx % oc,
        }
    };
    let parts: Vec<NodeState> = assign.iter().map(|&i| node(i)).collect();
    let landmarks = (0..topo.num_landmarks())
        .map(|k| {
            let p = parts[topo.part_of(k)];
            let (x, y) = best[k][assign[topo.part_of(k)]].1;
            NodeState { x, y, ..p }
        })
        .collect();
    Ok(NaiveResult {
        score: search.best_score,
        config: Some(Configuration {
            component,
            level: 0,
            rotation: 0,
            parts,
            landmarks,
        }),
    })
}

struct Search<'a> {
    model: &'a Model,
    component: usize,
    order: &'a [usize],
    local: &'a [Vec<f64>],
    width: usize,
    sv: usize,
    oc: usize,
    current: Vec<usize>,
    best_score: f64,
    best_assign: Option<Vec<usize>>,
}

impl Search<'_> {
    fn recurse(&mut self, depth: usize, acc: f64) {
        if depth == self.order.len() {
            if acc > self.best_score {
                self.best_score = acc;
                self.best_assign = Some(self.current.clone());
            }
            return;
        }
        let comp = self.model.component(self.component);
        let w = self.model.params();
        let j = self.order[depth];
        let n = self.local[j].len();
        for idx in 0..n {
            let own = self.local[j][idx];
            if own == NEG_INF {
                continue;
            }
            let mut v = acc + own;
            if let Some(q) = comp.topology.parent(j) {
                let pi = self.current[q];
                let (cell, s, o) = (idx / (self.sv * self.oc), (idx / self.oc) % self.sv, idx % self.oc);
                let (pcell, ps, po) = (pi / (self.sv * self.oc), (pi / self.oc) % self.sv, pi % self.oc);
                let b = w[comp.part_bias(j, ps, s, po, o)];
                if b == NEG_INF {
                    continue;
                }
                let child = ((cell % self.width) as i64, (cell / self.width) as i64);
                let parent = ((pcell % self.width) as i64, (pcell / self.width) as i64);
                let d = DeformationFeature::between(child, parent, comp.part_anchors[j][s]);
                v += b + spring_score(self.model.spring(comp.part_spring(j, s)), d);
            }
            self.current[j] = idx;
            self.recurse(depth + 1, v);
        }
    }
}
